//! Plain single-device training loop: the reference every distributed run is
//! compared against.

use super::model::{mse_loss, Dataset, TinyModel};
use super::optim::OptState;
use super::{memory_shapes, ChecksumLog, MemTracker, SimConfig, SimRun, Trajectory};
use crate::error::SimError;
use crate::placement::{Strategy, TrainingState};

pub fn run_oracle(model: &TinyModel, cfg: &SimConfig) -> Result<SimRun, SimError> {
    let cfg = cfg.single_device();
    cfg.check_common()?;
    let rows = cfg.check_batch(1)?;
    let data = Dataset::new(cfg.seed, model.input_dim(), model.output_dim());
    let mut params = model.split_layers(&model.init_params(cfg.seed));
    let mut opt: Vec<OptState> = params
        .iter()
        .map(|p| OptState::zeros(&cfg.optimizer, p.len()))
        .collect();
    let mut mem = MemTracker::default();
    mem.hold(TrainingState::Params, model.param_count());
    mem.hold(
        TrainingState::Optimizer,
        model.param_count() * cfg.optimizer.state_per_param(),
    );

    let mut traj = Trajectory {
        losses: Vec::with_capacity(cfg.steps),
        grads: Vec::with_capacity(cfg.steps),
        final_params: Vec::new(),
    };
    for step in 0..cfg.steps {
        let batch = data.batch(step, rows);
        let mut acts = vec![batch.x.clone()];
        for l in 0..model.layers() {
            let out = model.layer_forward(l, &params[l], &acts[l], rows);
            acts.push(out);
        }
        let act_elems: usize = acts.iter().map(Vec::len).sum();
        mem.hold(TrainingState::Activations, act_elems);
        let (loss, mut da) = mse_loss(&acts[model.layers()], &batch.y, rows);

        let mut grads = vec![Vec::new(); model.layers()];
        for l in (0..model.layers()).rev() {
            let (g, dx) =
                model.layer_backward(l, &params[l], &acts[l], &acts[l + 1], &da, rows, l > 0);
            mem.hold(TrainingState::Grads, g.len());
            grads[l] = g;
            if let Some(dx) = dx {
                da = dx;
            }
        }
        // Dividing by the single device count keeps the arithmetic identical
        // to a one-device data-parallel run.
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v /= 1.0;
            }
        }
        for l in 0..model.layers() {
            cfg.optimizer
                .apply(&mut params[l], &grads[l], &mut opt[l], step as u64 + 1);
        }
        mem.release(TrainingState::Grads, model.param_count());
        mem.release(TrainingState::Activations, act_elems);
        traj.losses.push(loss);
        traj.grads.push(grads.concat());
    }
    traj.final_params = params.concat();

    Ok(SimRun {
        devices: 1,
        steps: cfg.steps,
        trajectory: traj,
        checksums: ChecksumLog::default(),
        measured: Vec::new(),
        memory: memory_shapes(&Strategy::DataParallel.spec(), &[mem]),
        schedule: Vec::new(),
    })
}
