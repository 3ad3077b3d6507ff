//! Multi-seed comparison of flag presets and hyper-parameter grids.

use std::fmt::Write as _;

use super::config::{Preset, TrainConfig};
use super::train::train;
use crate::error::{Error, Result};
use crate::synth::Dataset;

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub variant: String,
    pub seed: u64,
    pub heldout_dc: f64,
    pub mean_dc: f64,
    pub best_iter: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariantSummary {
    pub variant: String,
    pub flags: String,
    pub runs: Vec<RunSummary>,
    pub heldout_dc: (f64, f64),
    pub mean_dc: (f64, f64),
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trains every named configuration once per seed (overriding its seed).
pub fn run_variants(
    variants: &[(String, TrainConfig)],
    seeds: &[u64],
    data: &Dataset,
    mut on_run: impl FnMut(&RunSummary),
) -> Result<Vec<VariantSummary>> {
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("at least one seed is required".into()));
    }
    let mut out = Vec::with_capacity(variants.len());
    for (name, config) in variants {
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let outcome = train(&TrainConfig { seed, ..config.clone() }, data)?;
            let run = RunSummary {
                variant: name.clone(),
                seed,
                heldout_dc: outcome.heldout_dc().unwrap_or(f64::NAN),
                mean_dc: outcome.best_report.overall_dc(),
                best_iter: outcome.best_iter,
            };
            on_run(&run);
            runs.push(run);
        }
        let heldout: Vec<f64> = runs.iter().map(|r| r.heldout_dc).collect();
        let all: Vec<f64> = runs.iter().map(|r| r.mean_dc).collect();
        out.push(VariantSummary {
            variant: name.clone(),
            flags: config.flags.to_string(),
            heldout_dc: mean_std(&heldout),
            mean_dc: mean_std(&all),
            runs,
        });
    }
    Ok(out)
}

/// One variant per preset, sharing every non-flag setting of `base`.
pub fn run_ablation(
    base: &TrainConfig,
    rows: &[Preset],
    seeds: &[u64],
    data: &Dataset,
    on_run: impl FnMut(&RunSummary),
) -> Result<Vec<VariantSummary>> {
    let variants: Vec<(String, TrainConfig)> =
        rows.iter().map(|&p| (p.name(), TrainConfig { flags: p.flags(), ..base.clone() })).collect();
    run_variants(&variants, seeds, data, on_run)
}

/// Cartesian product of `key=v1,v2,...` axes applied on top of `base`.
pub fn sweep_variants(base: &TrainConfig, axes: &[(String, Vec<String>)]) -> Result<Vec<(String, TrainConfig)>> {
    let mut variants = vec![(String::new(), base.clone())];
    for (key, values) in axes {
        let mut next = Vec::with_capacity(variants.len() * values.len());
        for (name, config) in &variants {
            for v in values {
                let mut c = config.clone();
                c.set(key, v)?;
                let label = if name.is_empty() { format!("{key}={v}") } else { format!("{name} {key}={v}") };
                next.push((label, c));
            }
        }
        variants = next;
    }
    for (_, c) in &variants {
        c.validate()?;
    }
    Ok(variants)
}

/// Parses `key=v1,v2,...`.
pub fn parse_axis(spec: &str) -> Result<(String, Vec<String>)> {
    let (k, vs) =
        spec.split_once('=').ok_or_else(|| Error::InvalidConfig(format!("expected key=v1,v2,..., got {spec:?}")))?;
    let values: Vec<String> = vs.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(Error::InvalidConfig(format!("no values in {spec:?}")));
    }
    Ok((k.trim().to_string(), values))
}

pub fn summary_csv(rows: &[VariantSummary]) -> String {
    let mut out = String::from("variant,flags,seeds,heldout_dc_mean,heldout_dc_std,dc_mean,dc_std\n");
    for r in rows {
        let seeds: Vec<String> = r.runs.iter().map(|x| x.seed.to_string()).collect();
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{:.6}",
            r.variant,
            r.flags,
            seeds.join(" "),
            r.heldout_dc.0,
            r.heldout_dc.1,
            r.mean_dc.0,
            r.mean_dc.1
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_dataset, DatasetSpec};

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sweep_grid_is_a_cartesian_product() {
        let axes = vec![parse_axis("beta=0.005,0.01").unwrap(), parse_axis("tau=0.9, 0.95").unwrap()];
        let v = sweep_variants(&TrainConfig::default(), &axes).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(v[3].0, "beta=0.01 tau=0.95");
        assert_eq!((v[1].1.beta, v[1].1.tau), (0.005, 0.95));
        assert!(parse_axis("beta").is_err());
        assert!(sweep_variants(&TrainConfig::default(), &[parse_axis("beta=0.7").unwrap()]).is_err());
    }

    #[test]
    fn ablation_reports_every_seed() {
        let spec =
            DatasetSpec { size: 16, labeled: 2, unlabeled_per_domain: 2, test_per_domain: 1, ..DatasetSpec::default() };
        let data = generate_dataset(&spec, 1).unwrap();
        let base = TrainConfig { t_total: 2, eval_every: 1, ..TrainConfig::default() };
        let mut seen = 0;
        let rows = run_ablation(&base, &[Preset::Row(1), Preset::Row(6)], &[1, 2, 3], &data, |_| seen += 1).unwrap();
        assert_eq!(seen, 6);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].flags, "ucp+sym_gd+tp_ram");
        assert_eq!(rows[0].runs.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![1, 2, 3]);
        let csv = summary_csv(&rows);
        assert!(csv.lines().nth(1).unwrap().starts_with("row1,ucp,1 2 3,"));
        assert!(run_ablation(&base, &[Preset::Row(1)], &[], &data, |_| ()).is_err());
    }
}
