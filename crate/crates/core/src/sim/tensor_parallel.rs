//! Tensor parallelism inside contiguous device blocks, data parallelism
//! across blocks.
//!
//! Layers come in pairs: the first splits its output features across the
//! block, the second its input features, so each pair needs one all-reduce
//! in the forward pass and one in the backward pass.

use std::ops::Range;

use super::model::{add_bias, linear_backward, matmul_rows, mse_loss, Dataset, TinyModel};
use super::optim::OptState;
use super::{memory_shapes, ChecksumLog, Layout, MemTracker, Meter, SimConfig, SimRun, Trajectory};
use crate::collectives::{shard_range, Buffer, DeviceGroup};
use crate::cost::CommLabel;
use crate::error::SimError;
use crate::placement::{Strategy, TrainingState as St};

#[derive(Clone, Copy, PartialEq, Eq)]
enum Split {
    /// Output features split: local weight rows `o ∈ range`.
    Column,
    /// Input features split: local weight columns `i ∈ range`.
    Row,
}

struct Piece {
    split: Split,
    /// Local feature range (outputs for column, inputs for row).
    range: Range<usize>,
    /// Local bias range.
    bias: Range<usize>,
}

fn piece(model: &TinyModel, l: usize, tp: usize, t: usize) -> Piece {
    let out = model.layer_out(l);
    if l % 2 == 0 {
        let r = shard_range(out, tp, t);
        Piece {
            split: Split::Column,
            range: r.clone(),
            bias: r,
        }
    } else {
        Piece {
            split: Split::Row,
            range: shard_range(model.layer_in(l), tp, t),
            bias: shard_range(out, tp, t),
        }
    }
}

/// Local `[weight, bias]` of a full layer vector.
fn extract(model: &TinyModel, l: usize, p: &Piece, full: &[f64]) -> Vec<f64> {
    let (inp, out) = (model.layer_in(l), model.layer_out(l));
    let (w, b) = full.split_at(out * inp);
    let mut local = Vec::new();
    match p.split {
        Split::Column => local.extend_from_slice(&w[p.range.start * inp..p.range.end * inp]),
        Split::Row => {
            for o in 0..out {
                local.extend_from_slice(&w[o * inp + p.range.start..o * inp + p.range.end]);
            }
        }
    }
    local.extend_from_slice(&b[p.bias.clone()]);
    local
}

/// Inverse of [`extract`].
fn scatter(model: &TinyModel, l: usize, p: &Piece, local: &[f64], full: &mut [f64]) {
    let (inp, out) = (model.layer_in(l), model.layer_out(l));
    let (w, b) = full.split_at_mut(out * inp);
    let wlen = match p.split {
        Split::Column => p.range.len() * inp,
        Split::Row => out * p.range.len(),
    };
    let (lw, lb) = local.split_at(wlen);
    match p.split {
        Split::Column => w[p.range.start * inp..p.range.end * inp].copy_from_slice(lw),
        Split::Row => {
            let k = p.range.len();
            for o in 0..out {
                w[o * inp + p.range.start..o * inp + p.range.end]
                    .copy_from_slice(&lw[o * k..(o + 1) * k]);
            }
        }
    }
    b[p.bias.clone()].copy_from_slice(lb);
}

pub fn run_tensor_parallel(model: &TinyModel, cfg: &SimConfig) -> Result<SimRun, SimError> {
    let Layout::TensorData { tp, dp } = cfg.layout else {
        return Err(SimError::Invalid(
            "run_tensor_parallel needs a tensor/data layout".into(),
        ));
    };
    if tp == 0 || dp == 0 {
        return Err(SimError::Invalid("parallel degrees must be positive".into()));
    }
    cfg.check_common()?;
    if cfg.fault.is_some() {
        return Err(SimError::Invalid(
            "faults are injected only into placement runs".into(),
        ));
    }
    let layers = model.layers();
    if layers % 2 != 0 {
        return Err(SimError::Invalid(format!(
            "tensor parallelism pairs layers; got {layers} layers"
        )));
    }
    for l in (0..layers).step_by(2) {
        let h = model.layer_out(l);
        if h % tp != 0 {
            return Err(SimError::DimNotDivisible {
                layer: l,
                dim: h,
                degree: tp,
            });
        }
    }
    let rows = cfg.check_batch(dp)?;
    let n = tp * dp;
    let es = cfg.element_bytes;
    let id = |t: usize, d: usize| t + tp * d;

    let init = model.split_layers(&model.init_params(cfg.seed));
    let pieces: Vec<Vec<Piece>> = (0..tp)
        .map(|t| (0..layers).map(|l| piece(model, l, tp, t)).collect())
        .collect();
    // params[dev][layer], opt likewise
    let mut params: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|dev| {
            let t = dev % tp;
            (0..layers).map(|l| extract(model, l, &pieces[t][l], &init[l])).collect()
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

    let mut tp_groups: Vec<DeviceGroup> = (0..dp)
        .map(|d| DeviceGroup::new((0..tp).map(|t| id(t, d)).collect()))
        .collect::<Result<_, _>>()?;
    let mut dp_groups: Vec<DeviceGroup> = (0..tp)
        .map(|t| DeviceGroup::new((0..dp).map(|d| id(t, d)).collect()))
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
            let group = &mut tp_groups[d];
            // acts[t][l]: input of layer l as seen by member t (full for
            // column layers, the local slice for row layers)
            let mut acts: Vec<Vec<Vec<f64>>> = vec![vec![batch.x.clone()]; tp];
            for l in 0..layers {
                let (inp, out) = (model.layer_in(l), model.layer_out(l));
                if l % 2 == 0 {
                    for t in 0..tp {
                        let p = &pieces[t][l];
                        let k = p.range.len();
                        let local = &params[id(t, d)][l];
                        let mut z = matmul_rows(&local[..k * inp], &acts[t][l], rows, inp, k);
                        add_bias(&mut z, &local[k * inp..], rows, k, 0);
                        let a = model.activate(l, z);
                        acts[t].push(a);
                    }
                } else {
                    let mut bufs = Vec::with_capacity(tp);
                    for t in 0..tp {
                        let p = &pieces[t][l];
                        let k = p.range.len();
                        let local = &params[id(t, d)][l];
                        let mut z = matmul_rows(&local[..out * k], &acts[t][l], rows, k, out);
                        add_bias(&mut z, &local[out * k..], rows, out, p.bias.start);
                        bufs.push(Buffer::new(z, es));
                    }
                    group.all_reduce(&mut bufs)?;
                    meter.absorb(CommLabel::TpActivationAllreduce, group);
                    log.compare(bufs.iter().map(|b| b.elements.as_slice()), || {
                        format!("step {step}: tensor-parallel output of layer {l} differs")
                    });
                    for (t, b) in bufs.into_iter().enumerate() {
                        let a = model.activate(l, b.elements);
                        acts[t].push(a);
                    }
                }
            }
            for t in 0..tp {
                let e: usize = acts[t].iter().map(Vec::len).sum();
                mem[id(t, d)].hold(St::Activations, e);
            }
            let (li, da) = mse_loss(&acts[0][layers], &batch.y, rows);
            loss += li;

            let mut upstream: Vec<Vec<f64>> = vec![da; tp];
            for l in (0..layers).rev() {
                let (inp, out) = (model.layer_in(l), model.layer_out(l));
                if l % 2 == 1 {
                    for t in 0..tp {
                        let p = &pieces[t][l];
                        let k = p.range.len();
                        let local = &params[id(t, d)][l];
                        let dz = model.activation_backward(l, &acts[t][l + 1], &upstream[t]);
                        let (mut g, db, dx) =
                            linear_backward(&local[..out * k], &acts[t][l], &dz, rows, k, out, true);
                        g.extend_from_slice(&db[p.bias.clone()]);
                        grads[id(t, d)][l] = g;
                        upstream[t] = dx.expect("requested");
                    }
                } else {
                    let mut dxs = Vec::with_capacity(tp);
                    for t in 0..tp {
                        let p = &pieces[t][l];
                        let k = p.range.len();
                        let local = &params[id(t, d)][l];
                        let dz = model.activation_backward(l, &acts[t][l + 1], &upstream[t]);
                        let (mut g, db, dx) =
                            linear_backward(&local[..k * inp], &acts[t][l], &dz, rows, inp, k, l > 0);
                        g.extend(db);
                        grads[id(t, d)][l] = g;
                        dxs.push(dx);
                    }
                    if l > 0 {
                        let mut bufs: Vec<Buffer> = dxs
                            .into_iter()
                            .map(|dx| Buffer::new(dx.expect("requested"), es))
                            .collect();
                        group.all_reduce(&mut bufs)?;
                        meter.absorb(CommLabel::TpActivationAllreduce, group);
                        upstream = bufs.into_iter().map(|b| b.elements).collect();
                    }
                }
            }
            for t in 0..tp {
                let g: usize = grads[id(t, d)].iter().map(Vec::len).sum();
                mem[id(t, d)].hold(St::Grads, g);
            }
        }
        traj.losses.push(loss / dp as f64);

        // data-parallel sync once every replica has finished its backward pass
        for (t, group) in dp_groups.iter_mut().enumerate() {
            for l in 0..layers {
                let mut bufs: Vec<Buffer> = (0..dp)
                    .map(|d| Buffer::new(std::mem::take(&mut grads[id(t, d)][l]), es))
                    .collect();
                group.all_reduce(&mut bufs)?;
                meter.absorb(CommLabel::SyncAllreduce, group);
                log.compare(bufs.iter().map(|b| b.elements.as_slice()), || {
                    format!("step {step}: gradients of layer {l}, tensor rank {t} differ across replicas")
                });
                for (d, b) in bufs.into_iter().enumerate() {
                    let mut g = b.elements;
                    g.iter_mut().for_each(|x| *x /= dp as f64);
                    grads[id(t, d)][l] = g;
                }
            }
        }

        let mut full_grads: Vec<Vec<f64>> =
            (0..layers).map(|l| vec![0.0; model.layer_param_count(l)]).collect();
        for t in 0..tp {
            for l in 0..layers {
                scatter(model, l, &pieces[t][l], &grads[id(t, 0)][l], &mut full_grads[l]);
            }
        }
        traj.grads.push(full_grads.concat());

        for dev in 0..n {
            for l in 0..layers {
                cfg.optimizer
                    .apply(&mut params[dev][l], &grads[dev][l], &mut opt[dev][l], step as u64 + 1);
            }
            let g: usize = grads[dev].iter().map(Vec::len).sum();
            mem[dev].release(St::Grads, g);
        }
        for t in 0..tp {
            for l in 0..layers {
                let copies: Vec<&[f64]> = (0..dp).map(|d| params[id(t, d)][l].as_slice()).collect();
                log.compare(copies, || {
                    format!("step {step}: params of layer {l}, tensor rank {t} differ across replicas")
                });
            }
        }
        for m in mem.iter_mut() {
            let held = m.current(St::Activations);
            m.release(St::Activations, held);
        }
        meter.end_step();
    }

    let mut final_layers: Vec<Vec<f64>> =
        (0..layers).map(|l| vec![0.0; model.layer_param_count(l)]).collect();
    for t in 0..tp {
        for l in 0..layers {
            scatter(model, l, &pieces[t][l], &params[id(t, 0)][l], &mut final_layers[l]);
        }
    }
    traj.final_params = final_layers.concat();
    let (measured, schedule) = meter.finish(cfg.steps);
    Ok(SimRun {
        devices: n,
        steps: cfg.steps,
        trajectory: traj,
        checksums: log,
        measured,
        memory: memory_shapes(&Strategy::TensorParallel.spec(), &mem),
        schedule,
    })
}
