//! Central finite-difference verification of analytic gradients.
//!
//! The checker is independent of the backward pass: it only re-evaluates the
//! loss with perturbed parameters. Work is parallelized over parameters;
//! each worker owns a cloned model.

use crate::backbone::GruNet;
use ndarray::ArrayD;
use rayon::prelude::*;
use std::collections::BTreeMap;

#[derive(Clone, Debug)]
pub struct GradCheckFailure {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub n_checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<GradCheckFailure>,
    pub failures: Vec<GradCheckFailure>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Relative error with the absolute fallback for near-zero gradients.
pub fn within_tolerance(analytic: f64, numeric: f64, rel_tol: f64, abs_tol: f64) -> bool {
    if analytic.abs() < 1e-6 && numeric.abs() < 1e-6 {
        return (analytic - numeric).abs() < abs_tol;
    }
    let denom = analytic.abs().max(numeric.abs());
    (analytic - numeric).abs() / denom < rel_tol
}

/// Check every coordinate of every parameter of `model` against central
/// finite differences of `loss_fn`. The analytic gradients must come from
/// the same loss evaluated at the unperturbed point.
pub fn check_model_gradients(
    model: &GruNet<f64>,
    analytic: &BTreeMap<String, ArrayD<f64>>,
    loss_fn: &(dyn Fn(&mut GruNet<f64>) -> f64 + Sync),
    rel_tol: f64,
    abs_tol: f64,
) -> GradCheckReport {
    let jobs: Vec<(String, usize)> = model
        .params
        .iter()
        .flat_map(|(name, v)| (0..v.len()).map(move |i| (name.clone(), i)))
        .collect();

    let chunk = 512;
    let results: Vec<GradCheckFailure> = jobs
        .par_chunks(chunk)
        .flat_map_iter(|batch| {
            let mut local = model.clone();
            let mut out = Vec::new();
            for (name, idx) in batch {
                let w0 = local.params.get(name).unwrap().as_slice().unwrap()[*idx];
                let g = analytic
                    .get(name)
                    .map(|a| a.as_slice().unwrap()[*idx])
                    .unwrap_or(0.0);
                // the first step balances truncation against roundoff; the
                // larger fallback rescues tiny gradients drowned in roundoff,
                // the smaller one rescues relu/argmax kink crossings
                let mut numeric = f64::NAN;
                let mut rel = f64::INFINITY;
                let mut passed = false;
                for scale in [3e-6, 1e-5, 1e-7] {
                    let h = scale * w0.abs().max(1.0);
                    set_at(&mut local, name, *idx, w0 + h);
                    let lp = loss_fn(&mut local);
                    set_at(&mut local, name, *idx, w0 - h);
                    let lm = loss_fn(&mut local);
                    set_at(&mut local, name, *idx, w0);
                    let fd = (lp - lm) / (2.0 * h);
                    let denom = g.abs().max(fd.abs()).max(1e-30);
                    let r = (g - fd).abs() / denom;
                    if r < rel {
                        numeric = fd;
                        rel = r;
                    }
                    if within_tolerance(g, fd, rel_tol, abs_tol) {
                        passed = true;
                        break;
                    }
                }
                if !passed {
                    out.push(GradCheckFailure {
                        param: name.clone(),
                        index: *idx,
                        analytic: g,
                        numeric,
                        rel_err: rel,
                    });
                } else {
                    // track the worst passing case through a sentinel entry
                    out.push(GradCheckFailure {
                        param: String::new(),
                        index: *idx,
                        analytic: g,
                        numeric,
                        rel_err: rel,
                    });
                }
            }
            out
        })
        .collect();

    let mut report = GradCheckReport {
        n_checked: jobs.len(),
        ..Default::default()
    };
    for r in results {
        if r.rel_err > report.max_rel_err && (r.analytic.abs() >= 1e-6 || r.numeric.abs() >= 1e-6)
        {
            report.max_rel_err = r.rel_err;
            report.worst = Some(r.clone());
        }
        if !r.param.is_empty() {
            report.failures.push(r);
        }
    }
    report
}

fn set_at(model: &mut GruNet<f64>, name: &str, idx: usize, value: f64) {
    let v = model.params.get_mut(name).expect("known parameter");
    v.as_slice_mut().unwrap()[idx] = value;
}
