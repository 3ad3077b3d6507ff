//! The mean-teacher training loop with intermediate-domain composites.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use crate::augment::{photometric_augment, weak_augment, GeometricDraw, PhotometricDraw};
use crate::error::{Error, Result};
use crate::grid::io::save_pgm;
use crate::grid::{argmax_field, blend, confidence_mask, BinaryMask, Grid, LabelField, MultiGrid, ProbField};
use crate::losses::{lambda_schedule, seg_loss_with_grad, total_loss, LossBreakdown};
use crate::mask::sample_rect_mask;
use crate::metrics::{score_labels, EvalReport};
use crate::reliability::{build_unreliable_intermediate, hardness, pick_unreliable, ReliableEntry, ReliableQueue};
use crate::segnet::{
    backward, ema_decay_at, forward, forward_cached, poly_lr, write_checkpoint, Gradients, LayerSpec, Real,
    SegmenterParams, Sgd, TeacherStudent,
};
use crate::style::{amplitude_mixup_channels, ram_mixup_channels, StyleSchedule};
use crate::synth::{Dataset, Sample};
use crate::ucp::{compose_ucp, ensemble_weight, merge_intermediate_pseudolabels, Composable};

/// One row of the per-iteration log.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationTrace {
    pub iter: usize,
    pub losses: LossBreakdown,
    pub lr: f64,
    pub gamma: f64,
    pub queue_len: usize,
    pub admitted: usize,
    /// Unlabeled sample picked as unreliable for the next iteration.
    pub unreliable_id: Option<usize>,
    /// Whether queue samples served as paste sources this iteration.
    pub reliable_source: bool,
}

/// Queue statistics at the end of one pass over the unlabeled split.
#[derive(Clone, Debug, PartialEq)]
pub struct ReliabilityRow {
    pub epoch: usize,
    pub end_iter: usize,
    pub admitted: usize,
    pub gamma: f64,
    pub queue_len: usize,
    pub mean_hardness: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalPoint {
    pub iter: usize,
    pub mean_dc: f64,
    pub heldout_dc: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub config: TrainConfig,
    /// Student with the best test mean DC over the evaluation points.
    pub best: SegmenterParams<f32>,
    pub last: SegmenterParams<f32>,
    pub best_iter: usize,
    pub best_report: EvalReport,
    pub traces: Vec<IterationTrace>,
    pub reliability: Vec<ReliabilityRow>,
    pub evals: Vec<EvalPoint>,
}

/// Where and how often to write PGM snapshots of the composites.
#[derive(Clone, Debug, PartialEq)]
pub struct DumpSpec {
    pub dir: PathBuf,
    pub every: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainOptions {
    pub dump: Option<DumpSpec>,
}

/// Argmax of the student's prediction.
pub fn infer<T: Real>(params: &SegmenterParams<T>, image: &MultiGrid) -> Result<LabelField> {
    Ok(argmax_field(&forward(params, image)?))
}

pub fn evaluate<T: Real>(params: &SegmenterParams<T>, samples: &[Sample]) -> Result<EvalReport> {
    let items = samples
        .iter()
        .map(|s| Ok((s.domain, score_labels(&infer(params, &s.image)?, &s.label)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_scores(&items))
}

/// Mean DC over every domain except the labeled domain 0.
pub fn heldout_dc(report: &EvalReport) -> Option<f64> {
    let mut domains: Vec<usize> = report.rows.iter().filter_map(|r| r.domain).filter(|&d| d != 0).collect();
    domains.dedup();
    report.mean_dc_over(&domains)
}

/// Forward, CE+Dice against `label` under `weight`, and back-propagation of
/// `scale` times the loss. Returns the unscaled loss. An empty weight map
/// contributes exactly zero, so the pass is skipped.
fn supervise(
    params: &SegmenterParams<f32>,
    image: &MultiGrid,
    label: &LabelField,
    weight: &BinaryMask,
    scale: f64,
    grads: &mut Gradients<f32>,
) -> Result<f64> {
    if weight.count_ones() == 0 {
        return Ok(0.0);
    }
    let (prob, cache) = forward_cached(params, image)?;
    let (value, mut grad) = seg_loss_with_grad(label, &prob, weight)?;
    if scale != 0.0 {
        grad.iter_mut().for_each(|g| *g *= scale);
        backward(params, &cache, &grad, grads);
    }
    Ok(value)
}

struct UnlabeledView {
    id: usize,
    weak: MultiGrid,
    strong: MultiGrid,
}

struct PendingUnreliable {
    weak: MultiGrid,
    prob: ProbField,
}

fn check_dataset(config: &TrainConfig, data: &Dataset) -> Result<(usize, usize, (usize, usize))> {
    let first = data.labeled.first().ok_or(Error::EmptyBatch)?;
    let dims = first.image.dims();
    let (channels, classes) = (first.image.channels(), first.label.classes());
    for s in data.labeled.iter().chain(&data.unlabeled).chain(&data.test) {
        crate::error::check_dims(dims, s.image.dims())?;
        if s.image.channels() != channels || s.label.classes() != classes {
            return Err(Error::InvalidConfig(format!("sample {} disagrees on channels or classes", s.id)));
        }
    }
    if config.flags.semi_supervised() && data.unlabeled.is_empty() {
        return Err(Error::InvalidConfig("semi-supervised flags need unlabeled samples".into()));
    }
    Ok((channels, classes, dims))
}

pub fn train(config: &TrainConfig, data: &Dataset) -> Result<TrainOutcome> {
    train_with(config, data, &TrainOptions::default())
}

pub fn train_with(config: &TrainConfig, data: &Dataset, options: &TrainOptions) -> Result<TrainOutcome> {
    config.validate()?;
    let (channels, classes, (h, w)) = check_dataset(config, data)?;
    let flags = config.flags;
    let t_total = config.t_total;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let init = SegmenterParams::<f32>::init(LayerSpec::new(channels, classes), &mut rng)?;
    let mut models = TeacherStudent::new(init, config.ema_decay);
    let mut sgd = Sgd::new(&models.student, config.momentum, config.weight_decay);
    let mut queue = ReliableQueue::new(config.queue_capacity, config.gamma0, config.delta)?;
    let mut pending: Option<PendingUnreliable> = None;

    let full_weight = BinaryMask::ones(h, w);
    let uses_unlabeled = flags.semi_supervised();
    let scores_hardness = flags.reliable || flags.unreliable;
    let epoch_len = data.unlabeled.len().div_ceil(config.unlabeled_batch).max(1);

    let mut traces = Vec::with_capacity(t_total);
    let mut reliability = Vec::new();
    let mut evals = Vec::new();
    let mut epoch_admitted = 0;
    let mut best: Option<(f64, usize, SegmenterParams<f32>, EvalReport)> = None;

    for t in 0..t_total {
        let lambda = lambda_schedule(t, t_total);
        let lr = poly_lr(config.lr0, t, t_total);
        let dumping = options.dump.as_ref().is_some_and(|d| d.every > 0 && t % d.every == 0);
        let mut dumps: Vec<(String, Grid)> = Vec::new();

        // Batches: weak labeled views, pixel-aligned weak/strong unlabeled views.
        let nl = config.labeled_batch.min(data.labeled.len());
        let labeled: Vec<(MultiGrid, LabelField)> = sample_indices(&mut rng, data.labeled.len(), nl)
            .into_iter()
            .map(|i| weak_augment(&data.labeled[i].image, &data.labeled[i].label, &mut rng))
            .collect();
        let unlabeled: Vec<UnlabeledView> = if uses_unlabeled {
            let nu = config.unlabeled_batch.min(data.unlabeled.len());
            sample_indices(&mut rng, data.unlabeled.len(), nu)
                .into_iter()
                .map(|i| {
                    let s = &data.unlabeled[i];
                    let weak = GeometricDraw::sample(s.image.dims(), &mut rng).apply_image(&s.image);
                    let strong = PhotometricDraw::sample(&mut rng).apply_image(&weak);
                    UnlabeledView { id: s.id, weak, strong }
                })
                .collect()
        } else {
            Vec::new()
        };
        let nu = unlabeled.len();

        // Style-transitioned labeled images for the student side.
        let styled: Vec<MultiGrid> = labeled
            .iter()
            .enumerate()
            .map(|(i, (x, _))| {
                if nu == 0 || !(flags.tp_ram || flags.ram) {
                    return Ok(x.clone());
                }
                let partner = &unlabeled[i % nu].weak;
                let mixed = if flags.tp_ram {
                    let schedule = StyleSchedule::new(t, t_total, config.beta)?;
                    amplitude_mixup_channels(x, partner, &schedule, &mut rng)?
                } else {
                    ram_mixup_channels(x, partner, config.beta, &mut rng)?
                };
                Ok(mixed.image)
            })
            .collect::<Result<_>>()?;

        // Pre-update predictions on the weak unlabeled views.
        let teacher_probs: Vec<ProbField> =
            unlabeled.iter().map(|u| forward(models.teacher(), &u.weak)).collect::<Result<_>>()?;
        let student_labels: Vec<LabelField> = if scores_hardness {
            unlabeled.iter().map(|u| infer(&models.student, &u.weak)).collect::<Result<_>>()?
        } else {
            Vec::new()
        };

        let mut grads = Gradients::zeros_like(&models.student);
        let student = &models.student;

        let mut l_s = 0.0;
        for (x, y) in &labeled {
            l_s += supervise(student, x, y, &full_weight, 1.0 / nl as f64, &mut grads)?;
        }
        l_s /= nl as f64;

        let with_unreliable = flags.unreliable && pending.is_some();
        let n_in = nu + with_unreliable as usize;
        let (mut l_in, mut l_out, mut l_sym) = (0.0, 0.0, 0.0);
        let reliable_source = flags.reliable && !queue.is_empty() && rng.gen_bool(config.reliable_source_prob);

        for (j, u) in unlabeled.iter().enumerate() {
            let p_weak = &teacher_probs[j];
            let q_weak = argmax_field(p_weak);
            let w_weak = confidence_mask(p_weak, config.tau);

            if flags.ucp {
                let mask = sample_rect_mask(h, w, &config.rect, &mut rng)?;
                let li = j % nl;
                let (y_src, x_src) = (&labeled[li].1, &labeled[li].0);
                let one_hot = y_src.one_hot();
                let entry = if reliable_source { queue.random_entry(&mut rng).cloned() } else { None };
                let (student_src, teacher_src, src_prob) = match &entry {
                    Some(e) => (&e.sample, &e.sample, &e.prob),
                    None => (&styled[li], x_src, &one_hot),
                };
                let pair = compose_ucp(
                    Composable::new(student_src, src_prob),
                    Composable::new(&u.strong, p_weak),
                    &mask,
                    config.tau,
                )?;
                l_in += supervise(
                    student,
                    &pair.sample_in,
                    &pair.label_in,
                    &pair.weight_in,
                    lambda / n_in as f64,
                    &mut grads,
                )?;
                l_out += supervise(
                    student,
                    &pair.sample_out,
                    &pair.label_out,
                    &pair.weight_out,
                    lambda / nu as f64,
                    &mut grads,
                )?;

                if flags.sym_gd {
                    let weak_in = blend(teacher_src, &u.weak, &mask)?;
                    let weak_out = blend(teacher_src, &u.weak, &mask.not())?;
                    let pred_in = forward(models.teacher(), &weak_in)?;
                    let pred_out = forward(models.teacher(), &weak_out)?;
                    let (q_mg, w_mg) = merge_intermediate_pseudolabels(&pred_in, &pred_out, &mask, config.tau)?;
                    let w_ens = ensemble_weight(&q_weak, &q_mg, &w_weak, &w_mg)?;
                    l_sym += supervise(student, &u.strong, &q_mg, &w_ens, lambda * lambda / nu as f64, &mut grads)?;
                    if dumping && j == 0 {
                        dumps.push(("merged_label".into(), label_image(&q_mg)));
                        dumps.push(("ensemble_weight".into(), w_ens.as_grid().clone()));
                    }
                }
                if dumping && j == 0 {
                    dumps.push(("labeled_weak".into(), x_src.plane(0).clone()));
                    dumps.push(("labeled_styled".into(), styled[li].plane(0).clone()));
                    dumps.push(("unlabeled_weak".into(), u.weak.plane(0).clone()));
                    dumps.push(("unlabeled_strong".into(), u.strong.plane(0).clone()));
                    dumps.push(("mask".into(), mask.as_grid().clone()));
                    dumps.push(("sample_in".into(), pair.sample_in.plane(0).clone()));
                    dumps.push(("sample_out".into(), pair.sample_out.plane(0).clone()));
                    dumps.push(("label_in".into(), label_image(&pair.label_in)));
                    dumps.push(("label_out".into(), label_image(&pair.label_out)));
                    dumps.push(("weight_in".into(), pair.weight_in.as_grid().clone()));
                    dumps.push(("weight_out".into(), pair.weight_out.as_grid().clone()));
                }
            }
            if flags.vanilla_gd {
                l_sym += supervise(student, &u.strong, &q_weak, &w_weak, lambda * lambda / nu as f64, &mut grads)?;
            }
        }

        if with_unreliable {
            let prev = pending.as_ref().expect("checked above");
            let strong = photometric_augment(&prev.weak, &mut rng);
            let inter = build_unreliable_intermediate(&styled[0], &labeled[0].1, &strong, &prev.prob, config.tau)?;
            l_in += supervise(student, &inter.sample, &inter.label, &inter.weight, lambda / n_in as f64, &mut grads)?;
            if dumping {
                dumps.push(("unreliable_sample".into(), inter.sample.plane(0).clone()));
                dumps.push(("unreliable_mask".into(), inter.mask.as_grid().clone()));
            }
        }
        if n_in > 0 {
            l_in /= n_in as f64;
        }
        if nu > 0 {
            l_out /= nu as f64;
            l_sym /= nu as f64;
        }
        let losses = total_loss(l_s, l_in, l_out, l_sym, lambda);

        sgd.step(&mut models.student, &grads, lr);
        models.ema_update(ema_decay_at(config.ema_decay, t));

        // Hardness on the pre-update predictions drives both sample pools.
        let mut admitted = 0;
        let mut unreliable_id = None;
        if scores_hardness && nu > 0 {
            let mut scores = Vec::with_capacity(nu);
            for (j, u) in unlabeled.iter().enumerate() {
                let teacher_label = argmax_field(&teacher_probs[j]);
                let h_j = hardness(&teacher_label, &student_labels[j])?;
                scores.push(h_j);
                if flags.reliable {
                    let entry = ReliableEntry {
                        sample: u.weak.clone(),
                        prob: teacher_probs[j].clone(),
                        label: teacher_label,
                        hardness: h_j,
                        source_id: u.id,
                    };
                    admitted += queue.try_admit(entry) as usize;
                }
            }
            if flags.reliable && admitted == 0 {
                queue.relax_threshold();
            }
            if flags.unreliable {
                let pick = pick_unreliable(&scores)?;
                unreliable_id = Some(unlabeled[pick].id);
                pending =
                    Some(PendingUnreliable { weak: unlabeled[pick].weak.clone(), prob: teacher_probs[pick].clone() });
            }
        }
        epoch_admitted += admitted;

        traces.push(IterationTrace {
            iter: t,
            losses,
            lr,
            gamma: queue.gamma(),
            queue_len: queue.len(),
            admitted,
            unreliable_id,
            reliable_source,
        });

        if (t + 1) % epoch_len == 0 || t + 1 == t_total {
            reliability.push(ReliabilityRow {
                epoch: t / epoch_len,
                end_iter: t,
                admitted: epoch_admitted,
                gamma: queue.gamma(),
                queue_len: queue.len(),
                mean_hardness: queue.mean_hardness(),
            });
            epoch_admitted = 0;
        }

        if !data.test.is_empty() && ((t + 1) % config.eval_every == 0 || t + 1 == t_total) {
            let report = evaluate(&models.student, &data.test)?;
            let mean_dc = report.overall_dc();
            evals.push(EvalPoint { iter: t, mean_dc, heldout_dc: heldout_dc(&report) });
            if best.as_ref().map_or(true, |b| mean_dc > b.0) {
                best = Some((mean_dc, t, models.student.clone(), report));
            }
        }

        if let (true, Some(spec)) = (dumping, &options.dump) {
            let dir = spec.dir.join(format!("iter_{t:05}"));
            fs::create_dir_all(&dir)?;
            for (name, grid) in &dumps {
                save_pgm(dir.join(format!("{name}.pgm")), grid)?;
            }
        }
    }

    let last = models.student.clone();
    let (best_iter, best_params, best_report) = match best {
        Some((_, it, p, r)) => (it, p, r),
        None => (t_total - 1, last.clone(), EvalReport::default()),
    };
    Ok(TrainOutcome {
        config: config.clone(),
        best: best_params,
        last,
        best_iter,
        best_report,
        traces,
        reliability,
        evals,
    })
}

/// Label field scaled to [0, 1] for viewing.
fn label_image(l: &LabelField) -> Grid {
    let top = (l.classes() - 1).max(1) as f64;
    Grid::from_fn(l.height(), l.width(), |y, x| l.get(y, x) as f64 / top)
}

fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

impl TrainOutcome {
    /// Per-iteration CSV, preceded by `# key=value` lines for every setting.
    pub fn telemetry_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.config.to_pairs() {
            let _ = writeln!(out, "# {k}={v}");
        }
        out.push_str(
            "iter,l_s,l_in,l_out,l_sym,l_total,lambda,lr,gamma,queue_len,admitted,unreliable_id,reliable_source\n",
        );
        for r in &self.traces {
            let l = &r.losses;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.iter,
                l.l_s,
                l.l_in,
                l.l_out,
                l.l_sym,
                l.l_total,
                l.lambda,
                r.lr,
                r.gamma,
                r.queue_len,
                r.admitted,
                r.unreliable_id.map_or_else(String::new, |i| i.to_string()),
                r.reliable_source as u8
            );
        }
        out
    }

    pub fn reliability_csv(&self) -> String {
        let mut out = String::from("epoch,end_iter,admitted,gamma,queue_len,mean_hardness\n");
        for r in &self.reliability {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.epoch,
                r.end_iter,
                r.admitted,
                r.gamma,
                r.queue_len,
                opt_num(r.mean_hardness)
            );
        }
        out
    }

    pub fn eval_history_csv(&self) -> String {
        let mut out = String::from("iter,mean_dc,heldout_dc\n");
        for e in &self.evals {
            let _ = writeln!(out, "{},{},{}", e.iter, e.mean_dc, opt_num(e.heldout_dc));
        }
        out
    }

    pub fn heldout_dc(&self) -> Option<f64> {
        heldout_dc(&self.best_report)
    }

    /// Writes `checkpoint.bin` (best), `last.bin`, `telemetry.csv`,
    /// `reliability.csv`, `eval_history.csv`, `report.csv` and `config.txt`.
    pub fn write_outputs(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        write_checkpoint(dir.join("checkpoint.bin"), &self.best)?;
        write_checkpoint(dir.join("last.bin"), &self.last)?;
        fs::write(dir.join("telemetry.csv"), self.telemetry_csv())?;
        fs::write(dir.join("reliability.csv"), self.reliability_csv())?;
        fs::write(dir.join("eval_history.csv"), self.eval_history_csv())?;
        fs::write(dir.join("report.csv"), self.best_report.to_csv())?;
        fs::write(dir.join("config.txt"), self.config.to_text())?;
        Ok(())
    }
}
