//! Data parallelism with per-state placement: DP, ZeRO-1/2/3.

use std::ops::Range;

use super::model::{mse_loss, Dataset, TinyModel};
use super::optim::OptState;
use super::{
    memory_shapes, to_half_precision, ChecksumLog, Fault, Layout, MemTracker, Meter, SimConfig,
    SimRun, Trajectory,
};
use crate::collectives::{shard_range, Buffer, DeviceGroup};
use crate::cost::CommLabel;
use crate::error::SimError;
use crate::placement::{PlacementMode as Mode, PlacementSpec, TrainingState as St};

/// Placements the simulator can execute.
///
/// Parameters may be replicated or sharded with gather, optimizer state and
/// gradients replicated or sharded. Gradients can only be sharded when the
/// optimizer state is, and gathered parameters need a sharded optimizer, so
/// each device updates exactly the region it owns.
pub fn check_supported(spec: &PlacementSpec) -> Result<(), SimError> {
    let unsupported = |why: &str| Err(SimError::SpecUnsupported(format!("{spec}: {why}")));
    for s in [St::Params, St::Optimizer, St::Grads, St::Activations] {
        match spec.mode(s) {
            Mode::Offloaded => return unsupported("offloaded states have no device to simulate"),
            Mode::Materialized => {
                return unsupported("materialized states are modelled analytically only")
            }
            _ => {}
        }
    }
    if spec.theta == Mode::Sharded {
        return unsupported("sharded parameters without gather cannot run a dense forward");
    }
    if spec.omega == Mode::ShardedWithGather || spec.grad == Mode::ShardedWithGather {
        return unsupported("gather is only simulated for parameters");
    }
    if spec.act != Mode::Replicated {
        return unsupported("activations are simulated per data-parallel replica only");
    }
    if spec.grad == Mode::Sharded && spec.omega != Mode::Sharded {
        return unsupported("sharded gradients need a sharded optimizer state");
    }
    if spec.theta == Mode::ShardedWithGather && spec.omega != Mode::Sharded {
        return unsupported("gathered parameters need a sharded optimizer state");
    }
    Ok(())
}

struct Device {
    /// Full layers when θ is replicated, owned shards otherwise.
    params: Vec<Vec<f64>>,
    /// Full layers or owned shards, matching Ω.
    opt: Vec<OptState>,
    /// Full layers or owned shards, matching G.
    grads: Vec<Vec<f64>>,
    mem: MemTracker,
}

pub fn run_distributed(model: &TinyModel, cfg: &SimConfig) -> Result<SimRun, SimError> {
    let Layout::Placement { spec } = cfg.layout else {
        return Err(SimError::Invalid(
            "run_distributed needs a placement layout".into(),
        ));
    };
    check_supported(&spec)?;
    cfg.check_common()?;
    let n = cfg.devices;
    let rows = cfg.check_batch(n)?;
    if cfg.fault == Some(Fault::ReductionOrder) && spec.grad != Mode::Replicated {
        return Err(SimError::Invalid(
            "the reduction-order fault needs replicated gradients".into(),
        ));
    }
    let layers = model.layers();
    let es = cfg.element_bytes;
    let owned = |l: usize, i: usize| -> Range<usize> { shard_range(model.layer_param_count(l), n, i) };
    let init = model.split_layers(&model.init_params(cfg.seed));
    let data = Dataset::new(cfg.seed, model.input_dim(), model.output_dim());
    let fault = cfg.fault;
    let precision_dev = (fault == Some(Fault::PrecisionMismatch)).then_some(1 % n);

    let mut devs: Vec<Device> = (0..n)
        .map(|i| {
            let mut mem = MemTracker::default();
            let params: Vec<Vec<f64>> = (0..layers)
                .map(|l| match spec.theta {
                    Mode::Replicated => init[l].clone(),
                    _ => init[l][owned(l, i)].to_vec(),
                })
                .collect();
            let opt: Vec<OptState> = (0..layers)
                .map(|l| {
                    let len = match spec.omega {
                        Mode::Replicated => model.layer_param_count(l),
                        _ => owned(l, i).len(),
                    };
                    OptState::zeros(&cfg.optimizer, len)
                })
                .collect();
            mem.hold(St::Params, params.iter().map(Vec::len).sum());
            mem.hold(St::Optimizer, opt.iter().map(OptState::elements).sum());
            Device {
                params,
                opt,
                grads: vec![Vec::new(); layers],
                mem,
            }
        })
        .collect();

    let mut world = DeviceGroup::contiguous(n);
    let mut meter = Meter::new(n);
    let mut log = ChecksumLog::default();
    let mut traj = Trajectory {
        losses: Vec::with_capacity(cfg.steps),
        grads: Vec::with_capacity(cfg.steps),
        final_params: Vec::new(),
    };

    // Full copy of layer `l` on every device: local for replicated
    // parameters, gathered and metered for sharded ones.
    let layer_views = |devs: &mut [Device],
                           world: &mut DeviceGroup,
                           meter: &mut Meter,
                           log: &mut ChecksumLog,
                           l: usize,
                           step: usize,
                           phase: &str|
     -> Result<Vec<Vec<f64>>, SimError> {
        let mut views: Vec<Vec<f64>> = match spec.theta {
            Mode::Replicated => {
                let views: Vec<Vec<f64>> = devs.iter().map(|d| d.params[l].clone()).collect();
                log.compare(views.iter().map(Vec::as_slice), || {
                    format!("step {step}: replicated params of layer {l} differ at {phase}")
                });
                views
            }
            _ => {
                let shards: Vec<Buffer> = devs
                    .iter()
                    .map(|d| Buffer::new(d.params[l].clone(), es))
                    .collect();
                let full = world.all_gather(&shards)?;
                meter.absorb(CommLabel::ParamGather, world);
                let views: Vec<Vec<f64>> = full.into_iter().map(|b| b.elements).collect();
                log.compare(views.iter().map(Vec::as_slice), || {
                    format!("step {step}: gathered params of layer {l} differ at {phase}")
                });
                // the gather lands in a separate full-layer buffer
                for (d, v) in devs.iter_mut().zip(&views) {
                    d.mem.borrow(St::Params, v.len());
                }
                views
            }
        };
        if let Some(k) = precision_dev {
            views[k].iter_mut().for_each(|x| *x = to_half_precision(*x));
        }
        Ok(views)
    };
    let release_views = |devs: &mut [Device], l: usize| {
        if spec.theta != Mode::Replicated {
            for d in devs.iter_mut() {
                d.mem.give_back(St::Params, model.layer_param_count(l));
            }
        }
    };

    for step in 0..cfg.steps {
        let global = data.batch(step, cfg.batch);
        let locals: Vec<_> = (0..n)
            .map(|i| {
                let src = if fault == Some(Fault::DuplicateSample) && i == 1 { 0 } else { i };
                global.slice(src * rows..(src + 1) * rows)
            })
            .collect();

        // forward
        let mut acts: Vec<Vec<Vec<f64>>> = locals.iter().map(|b| vec![b.x.clone()]).collect();
        for l in 0..layers {
            let views = layer_views(&mut devs, &mut world, &mut meter, &mut log, l, step, "forward")?;
            for i in 0..n {
                let out = model.layer_forward(l, &views[i], &acts[i][l], rows);
                acts[i].push(out);
            }
            release_views(&mut devs, l);
        }
        let act_elems: Vec<usize> = acts
            .iter()
            .map(|a| a.iter().map(Vec::len).sum())
            .collect();
        for (d, e) in devs.iter_mut().zip(&act_elems) {
            d.mem.hold(St::Activations, *e);
        }
        let mut loss = 0.0;
        let mut upstream = Vec::with_capacity(n);
        for i in 0..n {
            let (li, da) = mse_loss(&acts[i][layers], &locals[i].y, rows);
            loss += li;
            upstream.push(da);
        }
        traj.losses.push(loss / n as f64);

        // backward, synchronizing each layer's gradient as soon as it exists
        for l in (0..layers).rev() {
            let views = layer_views(&mut devs, &mut world, &mut meter, &mut log, l, step, "backward")?;
            let mut local = Vec::with_capacity(n);
            for i in 0..n {
                let (mut g, dx) = model.layer_backward(
                    l,
                    &views[i],
                    &acts[i][l],
                    &acts[i][l + 1],
                    &upstream[i],
                    rows,
                    l > 0,
                );
                if Some(i) == precision_dev {
                    g.iter_mut().for_each(|x| *x = to_half_precision(*x));
                }
                if fault == Some(Fault::MissingSample) && i == n - 1 {
                    g.iter_mut().for_each(|x| *x = 0.0);
                }
                if let Some(dx) = dx {
                    upstream[i] = dx;
                }
                local.push(g);
            }
            release_views(&mut devs, l);

            let synced: Vec<Vec<f64>> = match spec.grad {
                Mode::Replicated => {
                    let summed = if fault == Some(Fault::ReductionOrder) {
                        rotated_local_sums(&local)
                    } else {
                        let mut bufs: Vec<Buffer> =
                            local.into_iter().map(|g| Buffer::new(g, es)).collect();
                        world.all_reduce(&mut bufs)?;
                        meter.absorb(CommLabel::SyncAllreduce, &mut world);
                        bufs.into_iter().map(|b| b.elements).collect()
                    };
                    log.compare(summed.iter().map(Vec::as_slice), || {
                        format!("step {step}: gradients of layer {l} differ after all-reduce")
                    });
                    summed
                }
                _ => {
                    for d in devs.iter_mut() {
                        d.mem.borrow(St::Grads, model.layer_param_count(l));
                    }
                    let bufs: Vec<Buffer> = local.into_iter().map(|g| Buffer::new(g, es)).collect();
                    let shards = world.reduce_scatter(&bufs)?;
                    meter.absorb(CommLabel::SyncReducescatter, &mut world);
                    for d in devs.iter_mut() {
                        d.mem.give_back(St::Grads, model.layer_param_count(l));
                    }
                    shards.into_iter().map(|b| b.elements).collect()
                }
            };
            let scale = n as f64;
            for (d, mut g) in devs.iter_mut().zip(synced) {
                if fault != Some(Fault::WrongNormalization) {
                    g.iter_mut().for_each(|x| *x /= scale);
                }
                d.mem.hold(St::Grads, g.len());
                d.grads[l] = g;
            }
        }

        traj.grads.push(match spec.grad {
            Mode::Replicated => devs[0].grads.concat(),
            _ => (0..layers)
                .flat_map(|l| devs.iter().flat_map(move |d| d.grads[l].iter().copied()))
                .collect(),
        });

        // update the owned region
        let stale_dev = (fault == Some(Fault::StaleParams)
            && !(spec.theta == Mode::Replicated && spec.omega == Mode::Sharded))
            .then_some(n - 1);
        for (i, d) in devs.iter_mut().enumerate() {
            if Some(i) == stale_dev {
                continue;
            }
            for l in 0..layers {
                let region = match spec.omega {
                    Mode::Replicated => 0..model.layer_param_count(l),
                    _ => owned(l, i),
                };
                let g = match spec.grad {
                    Mode::Replicated => &d.grads[l][region.clone()],
                    _ => &d.grads[l][..],
                };
                let p = match spec.theta {
                    Mode::Replicated => &mut d.params[l][region],
                    _ => &mut d.params[l][..],
                };
                cfg.optimizer.apply(p, g, &mut d.opt[l], step as u64 + 1);
            }
        }
        if spec.omega == Mode::Replicated {
            for l in 0..layers {
                let flats: Vec<Vec<f64>> = devs.iter().map(|d| d.opt[l].flat()).collect();
                log.compare(flats.iter().map(Vec::as_slice), || {
                    format!("step {step}: optimizer state of layer {l} differs")
                });
            }
        }

        // replicated parameters updated shard-wise must be made whole again
        if spec.theta == Mode::Replicated
            && spec.omega == Mode::Sharded
            && fault != Some(Fault::StaleParams)
        {
            for l in 0..layers {
                let shards: Vec<Buffer> = devs
                    .iter()
                    .enumerate()
                    .map(|(i, d)| Buffer::new(d.params[l][owned(l, i)].to_vec(), es))
                    .collect();
                let full = world.all_gather(&shards)?;
                meter.absorb(CommLabel::ConsistencyRepair, &mut world);
                for (d, b) in devs.iter_mut().zip(full) {
                    d.params[l] = b.elements;
                }
            }
        }

        for (d, e) in devs.iter_mut().zip(&act_elems) {
            let g: usize = d.grads.iter().map(Vec::len).sum();
            d.mem.release(St::Grads, g);
            d.mem.release(St::Activations, *e);
            d.grads.iter_mut().for_each(Vec::clear);
        }
        meter.end_step();
    }

    traj.final_params = (0..layers)
        .flat_map(|l| match spec.theta {
            Mode::Replicated => devs[0].params[l].clone(),
            _ => devs.iter().flat_map(|d| d.params[l].iter().copied()).collect(),
        })
        .collect();
    let trackers: Vec<MemTracker> = devs.into_iter().map(|d| d.mem).collect();
    let (measured, schedule) = meter.finish(cfg.steps);
    Ok(SimRun {
        devices: n,
        steps: cfg.steps,
        trajectory: traj,
        checksums: log,
        measured,
        memory: memory_shapes(&spec, &trackers),
        schedule,
    })
}

/// Each device adds the contributions starting from its own, so the sums
/// agree mathematically but not bitwise.
fn rotated_local_sums(local: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = local.len();
    (0..n)
        .map(|i| {
            let mut acc = local[i].clone();
            for k in 1..n {
                for (a, v) in acc.iter_mut().zip(&local[(i + k) % n]) {
                    *a += v;
                }
            }
            acc
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::placement::Strategy;
    use crate::sim::{run_oracle, Optimizer};

    fn cfg(strategy: Strategy, n: usize) -> SimConfig {
        SimConfig::new(Layout::placement(strategy.spec()), n)
            .with_batch(16)
            .with_steps(4)
            .with_optimizer(Optimizer::adam(0.01))
    }

    #[test]
    fn single_device_matches_oracle_bitwise() {
        let m = TinyModel::mlp(8, 8, 8, 3);
        for s in [Strategy::DataParallel, Strategy::Zero1, Strategy::Zero2, Strategy::Zero3] {
            let c = cfg(s, 1);
            let a = run_distributed(&m, &c).unwrap();
            let o = run_oracle(&m, &c).unwrap();
            assert_eq!(a.trajectory, o.trajectory, "{}", s.name());
        }
    }

    #[test]
    fn offload_and_bad_specs_are_rejected() {
        let m = TinyModel::mlp(8, 8, 8, 2);
        let e = run_distributed(&m, &cfg(Strategy::ZeroOffload, 4)).unwrap_err();
        assert!(matches!(e, SimError::SpecUnsupported(_)));
        assert!(e.to_string().contains("analytical-only"));
        let odd = cfg(Strategy::DataParallel, 3);
        assert!(matches!(
            run_distributed(&m, &odd),
            Err(SimError::BatchNotDivisible { batch: 16, parts: 3 })
        ));
    }

    #[test]
    fn zero3_holds_shard_plus_one_layer() {
        let m = TinyModel::mlp(8, 8, 8, 3);
        let run = run_distributed(&m, &cfg(Strategy::Zero3, 4)).unwrap();
        let p = run.memory_of(St::Params).unwrap();
        let per = m.param_count() / 4;
        assert!(p.peak_persistent.iter().all(|&x| x == per));
        assert!(p
            .peak_total
            .iter()
            .all(|&x| x == per + m.max_layer_param_count()));
    }

    #[test]
    fn rotated_sums_disagree_bitwise() {
        let local: Vec<Vec<f64>> = [1e16, 1.0, -1e16, 1.0].iter().map(|&v| vec![v]).collect();
        let s = rotated_local_sums(&local);
        assert!(s.windows(2).any(|w| w[0] != w[1]));
    }
}
