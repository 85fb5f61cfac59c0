//! Pipeline stages over contiguous layer ranges, data parallelism inside
//! each stage. One micro-batch per step: stage `k` of replica `d` is device
//! `d + D·k`, so each stage occupies a contiguous block of devices.

use super::model::{mse_loss, Dataset, TinyModel};
use super::optim::OptState;
use super::{memory_shapes, ChecksumLog, Layout, MemTracker, Meter, SimConfig, SimRun, Trajectory};
use crate::collectives::{Buffer, DeviceGroup};
use crate::cost::CommLabel;
use crate::error::SimError;
use crate::placement::{Strategy, TrainingState as St};

pub fn run_pipeline_parallel(model: &TinyModel, cfg: &SimConfig) -> Result<SimRun, SimError> {
    let Layout::PipelineData { stages, dp } = cfg.layout else {
        return Err(SimError::Invalid(
            "run_pipeline_parallel needs a pipeline/data layout".into(),
        ));
    };
    if stages == 0 || dp == 0 {
        return Err(SimError::Invalid("parallel degrees must be positive".into()));
    }
    cfg.check_common()?;
    if cfg.fault.is_some() {
        return Err(SimError::Invalid(
            "faults are injected only into placement runs".into(),
        ));
    }
    let layers = model.layers();
    if layers % stages != 0 {
        return Err(SimError::LayersNotDivisible {
            layers,
            parts: stages,
        });
    }
    let per = layers / stages;
    let rows = cfg.check_batch(dp)?;
    let n = stages * dp;
    let es = cfg.element_bytes;
    let id = |d: usize, k: usize| d + dp * k;
    let stage_of = |l: usize| l / per;

    let init = model.split_layers(&model.init_params(cfg.seed));
    // params[dev] holds only the owning stage's layers (empty elsewhere)
    let mut params: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|dev| {
            let k = dev / dp;
            (0..layers)
                .map(|l| if stage_of(l) == k { init[l].clone() } else { Vec::new() })
                .collect()
        })
        .collect();
    let mut opt: Vec<Vec<OptState>> = params
        .iter()
        .map(|ls| ls.iter().map(|p| OptState::zeros(&cfg.optimizer, p.len())).collect())
        .collect();
    let mut mem: Vec<MemTracker> = (0..n)
        .map(|dev| {
            let mut m = MemTracker::default();
            m.hold(St::Params, params[dev].iter().map(Vec::len).sum());
            m.hold(St::Optimizer, opt[dev].iter().map(OptState::elements).sum());
            m
        })
        .collect();
    let mut stage_groups: Vec<DeviceGroup> = (0..stages)
        .map(|k| DeviceGroup::new((0..dp).map(|d| id(d, k)).collect()))
        .collect::<Result<_, _>>()?;

    let data = Dataset::new(cfg.seed, model.input_dim(), model.output_dim());
    let mut meter = Meter::new(n);
    let mut log = ChecksumLog::default();
    let mut traj = Trajectory {
        losses: Vec::with_capacity(cfg.steps),
        grads: Vec::with_capacity(cfg.steps),
        final_params: Vec::new(),
    };

    for step in 0..cfg.steps {
        let global = data.batch(step, cfg.batch);
        let mut loss = 0.0;
        let mut grads: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); layers]; n];

        for d in 0..dp {
            let batch = global.slice(d * rows..(d + 1) * rows);
            let mut acts = vec![batch.x.clone()];
            for l in 0..layers {
                let k = stage_of(l);
                if l > 0 && stage_of(l - 1) != k {
                    let bytes = acts[l].len() as u64 * es;
                    meter.point_to_point(CommLabel::PpActivationTransfer, id(d, k - 1), bytes);
                }
                let out = model.layer_forward(l, &params[id(d, k)][l], &acts[l], rows);
                mem[id(d, k)].hold(St::Activations, out.len());
                acts.push(out);
            }
            let (li, mut da) = mse_loss(&acts[layers], &batch.y, rows);
            loss += li;
            for l in (0..layers).rev() {
                let k = stage_of(l);
                if l + 1 < layers && stage_of(l + 1) != k {
                    let bytes = da.len() as u64 * es;
                    meter.point_to_point(CommLabel::PpActivationTransfer, id(d, k + 1), bytes);
                }
                let dev = id(d, k);
                let (g, dx) =
                    model.layer_backward(l, &params[dev][l], &acts[l], &acts[l + 1], &da, rows, l > 0);
                mem[dev].hold(St::Grads, g.len());
                grads[dev][l] = g;
                if let Some(dx) = dx {
                    da = dx;
                }
            }
        }
        traj.losses.push(loss / dp as f64);

        for l in 0..layers {
            let k = stage_of(l);
            let group = &mut stage_groups[k];
            let mut bufs: Vec<Buffer> = (0..dp)
                .map(|d| Buffer::new(std::mem::take(&mut grads[id(d, k)][l]), es))
                .collect();
            group.all_reduce(&mut bufs)?;
            meter.absorb(CommLabel::SyncAllreduce, group);
            log.compare(bufs.iter().map(|b| b.elements.as_slice()), || {
                format!("step {step}: gradients of layer {l} differ within stage {k}")
            });
            for (d, b) in bufs.into_iter().enumerate() {
                let mut g = b.elements;
                g.iter_mut().for_each(|x| *x /= dp as f64);
                grads[id(d, k)][l] = g;
            }
        }
        traj.grads
            .push((0..layers).flat_map(|l| grads[id(0, stage_of(l))][l].clone()).collect());

        for dev in 0..n {
            for l in 0..layers {
                if !params[dev][l].is_empty() {
                    cfg.optimizer
                        .apply(&mut params[dev][l], &grads[dev][l], &mut opt[dev][l], step as u64 + 1);
                }
            }
            let g: usize = grads[dev].iter().map(Vec::len).sum();
            mem[dev].release(St::Grads, g);
            let a = mem[dev].current(St::Activations);
            mem[dev].release(St::Activations, a);
        }
        for l in 0..layers {
            let k = stage_of(l);
            let copies: Vec<&[f64]> = (0..dp).map(|d| params[id(d, k)][l].as_slice()).collect();
            log.compare(copies, || {
                format!("step {step}: params of layer {l} differ within stage {k}")
            });
        }
        meter.end_step();
    }

    traj.final_params = (0..layers)
        .flat_map(|l| params[id(0, stage_of(l))][l].clone())
        .collect();
    let (measured, schedule) = meter.finish(cfg.steps);
    Ok(SimRun {
        devices: n,
        steps: cfg.steps,
        trajectory: traj,
        checksums: log,
        measured,
        memory: memory_shapes(&Strategy::PipelineParallel.spec(), &mem),
        schedule,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run_oracle, Optimizer};

    fn cfg(stages: usize, dp: usize) -> SimConfig {
        SimConfig::new(Layout::PipelineData { stages, dp }, 0)
            .with_steps(3)
            .with_optimizer(Optimizer::adam(0.01))
    }

    #[test]
    fn one_stage_one_replica_is_bitwise_oracle() {
        let m = TinyModel::mlp(8, 8, 8, 4);
        let c = cfg(1, 1);
        assert_eq!(
            run_pipeline_parallel(&m, &c).unwrap().trajectory,
            run_oracle(&m, &c).unwrap().trajectory
        );
    }

    #[test]
    fn uneven_stages_are_rejected() {
        let m = TinyModel::mlp(8, 8, 8, 3);
        assert!(matches!(
            run_pipeline_parallel(&m, &cfg(2, 1)),
            Err(SimError::LayersNotDivisible { layers: 3, parts: 2 })
        ));
    }

    #[test]
    fn pure_pipeline_matches_oracle_bitwise() {
        // no reduction across devices, so nothing reorders the arithmetic
        let m = TinyModel::mlp(8, 8, 8, 4);
        let c = cfg(4, 1);
        let run = run_pipeline_parallel(&m, &c).unwrap();
        assert_eq!(run.trajectory, run_oracle(&m, &c).unwrap().trajectory);
        // 3 boundaries, forward and backward, batch 16 × width 8 × 2 bytes
        let total: u64 = run.measured(CommLabel::PpActivationTransfer).unwrap().per_device_total.iter().sum();
        assert_eq!(total, 3 * 3 * 2 * 16 * 8 * 2);
    }
}
