//! Training loop over streamed synthetic pairs.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::autograd::{Graph, Tensor};
use crate::checkpoint::{save_matcher, TrainerState};
use crate::error::Result;
use crate::layers::apply_bn_updates;
use crate::loss::{evaluate_pair_loss, LossValues};
use crate::model::Matcher;
use crate::optim::{cosine_lr, Adam};
use crate::params::ParamId;
use crate::rng::{fnv1a64, tag};
use crate::synth::gen_pair;

#[derive(Clone, Copy, Debug)]
pub struct LossRecord {
    pub step: u64,
    pub total: f64,
    pub pos: f64,
    pub neg: f64,
    pub fine: f64,
    pub lr: f64,
}

pub struct TrainReport {
    pub curve: Vec<LossRecord>,
    pub final_step: u64,
}

/// Deterministic seed of the training pair at (step, batch slot).
pub fn pair_seed(master: u64, step: u64, slot: u64) -> u64 {
    fnv1a64(&[master, tag::DATA, step, slot])
}

/// Run (or resume) training. Writes periodic checkpoints and a loss curve
/// CSV when `out_dir` is given; always returns the curve.
pub fn train(
    matcher: &mut Matcher,
    out_dir: Option<&Path>,
    resume: Option<TrainerState>,
    verbose: bool,
) -> Result<TrainReport> {
    let cfg = matcher.cfg.clone();
    let gen_cfg = cfg.gen_config();
    let (mut adam, start_step) = match resume {
        Some(state) => (state.adam, state.step),
        None => (Adam::new(&matcher.store), 0),
    };
    let mut curve = Vec::new();

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.txt"), cfg.to_text())?;
    }

    for step in start_step..cfg.steps as u64 {
        let mut grad_sums: BTreeMap<ParamId, Tensor> = BTreeMap::new();
        let mut bn_updates = Vec::new();
        let mut batch_values: Vec<LossValues> = Vec::new();

        for slot in 0..cfg.batch_size as u64 {
            let seed = pair_seed(cfg.seed, step, slot);
            let pair = gen_pair(seed, &gen_cfg)?;
            let g = Graph::new();
            let bind = matcher.store.bind(&g);
            let Some((loss_var, values, pair_bn)) =
                evaluate_pair_loss(&g, matcher, &bind, &pair, step)?
            else {
                continue;
            };
            g.backward(loss_var);
            for (id, grad) in bind.gradients(&g, &matcher.store) {
                grad_sums
                    .entry(id)
                    .and_modify(|t| t.add_assign(&grad))
                    .or_insert(grad);
            }
            bn_updates.extend(pair_bn);
            batch_values.push(values);
        }

        let contributing = batch_values.len().max(1) as f64;
        let grads: Vec<(ParamId, Tensor)> = grad_sums
            .into_iter()
            .map(|(id, mut t)| {
                for v in t.data_mut() {
                    *v /= contributing;
                }
                (id, t)
            })
            .collect();
        let lr = cosine_lr(cfg.learning_rate, step, cfg.steps as u64);
        adam.apply(&mut matcher.store, &grads, lr);
        apply_bn_updates(&mut matcher.store, &bn_updates);

        let mean = |f: fn(&LossValues) -> f64| -> f64 {
            if batch_values.is_empty() {
                0.0
            } else {
                batch_values.iter().map(f).sum::<f64>() / batch_values.len() as f64
            }
        };
        let record = LossRecord {
            step,
            total: mean(|v| v.total),
            pos: mean(|v| v.pos),
            neg: mean(|v| v.neg),
            fine: mean(|v| v.fine),
            lr,
        };
        curve.push(record);
        if verbose && (step % 25 == 0 || step + 1 == cfg.steps as u64) {
            eprintln!(
                "step {:>5}  loss {:>10.4}  pos {:>10.4}  neg {:>8.4}  fine {:>8.4}  lr {:.5}",
                step, record.total, record.pos, record.neg, record.fine, lr
            );
        }

        if let Some(dir) = out_dir {
            let next = step + 1;
            if cfg.checkpoint_every > 0 && next % cfg.checkpoint_every as u64 == 0 {
                save_matcher(&dir.join(format!("ckpt_{next:06}.ckpt")), matcher, Some((&adam, next)))?;
            }
        }
    }

    let final_step = cfg.steps as u64;
    if let Some(dir) = out_dir {
        save_matcher(&dir.join("final.ckpt"), matcher, Some((&adam, final_step)))?;
        let mut csv = String::from("step,total,pos,neg,fine,lr\n");
        for r in &curve {
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.step, r.total, r.pos, r.neg, r.fine, r.lr
            ));
        }
        let mut f = std::fs::File::create(dir.join("loss.csv"))?;
        f.write_all(csv.as_bytes())?;
    }
    Ok(TrainReport { curve, final_step })
}
