use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::csv_err;
use crate::error::Result;

/// Diagnostics of one online step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Global step index, continuing across passes.
    pub t: usize,
    pub pass: usize,
    /// `‖∇_U C_t(U[t])‖_F`, only on steps where it was evaluated.
    pub grad_norm: Option<f64>,
    /// `g_t(ψ_t, U[t-1])` including the `λ/(2t)‖U[t-1]‖²` term.
    pub cost: f64,
    /// `-Σ log ℓ + (λ/2)‖ψ_t‖²` at `U[t-1]`.
    pub data_loss: f64,
    /// `‖U[t-1]‖_F²`.
    pub u_norm_sq: f64,
    /// `‖U[t] - U[t-1]‖_F`.
    pub delta_u: f64,
    pub eta: Option<f64>,
    pub eta_grad: Option<f64>,
    pub inner_iters: usize,
    pub fell_back: bool,
    pub solve_secs: f64,
    pub update_secs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `(t, ‖∇_U C_t‖_F)` for every step where the gradient norm was evaluated.
    pub fn grad_norms(&self) -> Vec<(usize, f64)> {
        self.records.iter().filter_map(|r| r.grad_norm.map(|g| (r.t, g))).collect()
    }

    /// Mean of the recorded gradient norms with `lo <= t <= hi`.
    pub fn mean_grad_norm(&self, lo: usize, hi: usize) -> Option<f64> {
        let v: Vec<f64> = self.grad_norms().into_iter().filter(|&(t, _)| t >= lo && t <= hi).map(|p| p.1).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn total_solve_secs(&self) -> f64 {
        self.records.iter().map(|r| r.solve_secs).sum()
    }

    pub fn total_update_secs(&self) -> f64 {
        self.records.iter().map(|r| r.update_secs).sum()
    }

    /// Write one CSV row per step:
    ///
    /// `t,pass,grad_norm,cost,data_loss,u_norm_sq,delta_u[,eta,eta_grad],inner_iters,fell_back,solve_secs,update_secs`
    ///
    /// The threshold columns appear only when any step carries a threshold.
    /// `grad_norm` is empty on steps where it was not evaluated.
    pub fn write_csv(&self, path: &Path, include_timing: bool) -> Result<()> {
        let with_eta = self.records.iter().any(|r| r.eta.is_some());
        let mut out = String::from("t,pass,grad_norm,cost,data_loss,u_norm_sq,delta_u");
        if with_eta {
            out.push_str(",eta,eta_grad");
        }
        out.push_str(",inner_iters,fell_back");
        if include_timing {
            out.push_str(",solve_secs,update_secs");
        }
        out.push('\n');
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}",
                r.t,
                r.pass,
                opt(r.grad_norm),
                r.cost,
                r.data_loss,
                r.u_norm_sq,
                r.delta_u
            ));
            if with_eta {
                out.push_str(&format!(",{},{}", opt(r.eta), opt(r.eta_grad)));
            }
            out.push_str(&format!(",{},{}", r.inner_iters, u8::from(r.fell_back)));
            if include_timing {
                out.push_str(&format!(",{},{}", r.solve_secs, r.update_secs));
            }
            out.push('\n');
        }
        std::fs::File::create(path)?.write_all(out.as_bytes())?;
        Ok(())
    }

    /// Read a file written by [`RunTrace::write_csv`]; missing timing columns
    /// read as zero.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut records = Vec::new();
        for row in reader.deserialize::<CsvRow>() {
            let r = row.map_err(|e| csv_err(path, e))?;
            records.push(TraceRecord {
                t: r.t,
                pass: r.pass,
                grad_norm: r.grad_norm,
                cost: r.cost,
                data_loss: r.data_loss,
                u_norm_sq: r.u_norm_sq,
                delta_u: r.delta_u,
                eta: r.eta,
                eta_grad: r.eta_grad,
                inner_iters: r.inner_iters,
                fell_back: r.fell_back != 0,
                solve_secs: r.solve_secs.unwrap_or(0.0),
                update_secs: r.update_secs.unwrap_or(0.0),
            });
        }
        Ok(Self { records })
    }
}

#[derive(Deserialize)]
struct CsvRow {
    t: usize,
    pass: usize,
    grad_norm: Option<f64>,
    cost: f64,
    data_loss: f64,
    u_norm_sq: f64,
    delta_u: f64,
    #[serde(default)]
    eta: Option<f64>,
    #[serde(default)]
    eta_grad: Option<f64>,
    inner_iters: usize,
    fell_back: u8,
    #[serde(default)]
    solve_secs: Option<f64>,
    #[serde(default)]
    update_secs: Option<f64>,
}
