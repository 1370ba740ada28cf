//! Result records.
//!
//! A record is a header line `# <kind> v<version>` followed by
//! `key = value` lines. Keys are dotted paths; per-restart values use
//! `restart.<r>.<field>`. Floats use `{:.16e}`, which round-trips every `f64`.

use std::path::Path;

use crate::types::HyperParams;

pub const RESULT_KIND: &str = "dckm-result";
pub const BENCH_KIND: &str = "dckm-bench";
pub const VERSION: u32 = 1;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// Parsed form of any record: its kind, version and ordered entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub kind: String,
    pub version: u32,
    pub entries: Vec<(String, String)>,
}

impl Record {
    pub fn parse(text: &str) -> Option<Self> {
        let mut lines = text.lines();
        let header = lines.next()?.strip_prefix("# ")?;
        let (kind, version) = header.split_once(" v")?;
        let version = version.parse().ok()?;
        let mut entries = Vec::new();
        for line in lines {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once(" = ")?;
            entries.push((k.to_string(), v.to_string()));
        }
        Some(Self { kind: kind.to_string(), version, entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key)?.parse().ok()
    }
}

struct Writer {
    out: String,
}

impl Writer {
    fn new(kind: &str) -> Self {
        Self { out: format!("# {kind} v{VERSION}\n") }
    }

    fn kv(&mut self, key: &str, value: impl std::fmt::Display) {
        self.out.push_str(&format!("{key} = {value}\n"));
    }

    fn f(&mut self, key: &str, value: f64) {
        self.kv(key, fmt_f64(value));
    }
}

/// Everything `fit` reports about one method on one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub method: String,
    pub data: String,
    pub n: usize,
    pub d: usize,
    pub hyper: HyperParams,
    pub seeds: Vec<u64>,
    /// Per-restart scores against the ground truth; empty without labels.
    pub nmi: Vec<f64>,
    pub ari: Vec<f64>,
    /// Objective (dckm) or k-means loss (baselines) of the selected run.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub corr_before: f64,
    /// Correlation amount under the learned weights, for weighting methods.
    pub corr_after: Option<f64>,
    pub kept_features: Option<usize>,
}

impl RunRecord {
    pub fn mean_nmi(&self) -> Option<f64> {
        mean_std(&self.nmi).map(|m| m.0)
    }

    pub fn mean_ari(&self) -> Option<f64> {
        mean_std(&self.ari).map(|m| m.0)
    }

    fn write_fields(&self, w: &mut Writer, prefix: &str) {
        let key = |k: &str| format!("{prefix}{k}");
        w.kv(&key("method"), &self.method);
        w.kv(&key("data"), &self.data);
        w.kv(&key("n"), self.n);
        w.kv(&key("d"), self.d);
        w.kv(&key("k"), self.hyper.k);
        w.f(&key("lambda1"), self.hyper.lambda1);
        w.f(&key("lambda2"), self.hyper.lambda2);
        w.f(&key("lambda3"), self.hyper.lambda3);
        w.kv(&key("max_outer_iters"), self.hyper.max_outer_iters);
        w.kv(&key("max_w_iters"), self.hyper.max_w_iters);
        w.f(&key("outer_tol"), self.hyper.outer_tol);
        w.f(&key("grad_step"), self.hyper.grad_step);
        w.kv(&key("seed"), self.hyper.seed);
        w.kv(&key("restarts"), self.seeds.len());
        for (r, seed) in self.seeds.iter().enumerate() {
            w.kv(&key(&format!("restart.{r}.seed")), seed);
            if let (Some(n), Some(a)) = (self.nmi.get(r), self.ari.get(r)) {
                w.f(&key(&format!("restart.{r}.nmi")), *n);
                w.f(&key(&format!("restart.{r}.ari")), *a);
            }
        }
        if let Some((m, s)) = mean_std(&self.nmi) {
            w.f(&key("nmi.mean"), m);
            w.f(&key("nmi.std"), s);
        }
        if let Some((m, s)) = mean_std(&self.ari) {
            w.f(&key("ari.mean"), m);
            w.f(&key("ari.std"), s);
        }
        w.f(&key("objective"), self.objective);
        w.kv(&key("iterations"), self.iterations);
        w.kv(&key("converged"), self.converged);
        w.f(&key("corr.before"), self.corr_before);
        if let Some(after) = self.corr_after {
            w.f(&key("corr.after"), after);
        }
        if let Some(kept) = self.kept_features {
            w.kv(&key("kept_features"), kept);
        }
    }

    pub fn render(&self) -> String {
        let mut w = Writer::new(RESULT_KIND);
        self.write_fields(&mut w, "");
        w.out
    }
}

/// Best grid point of one method on one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchCell {
    pub dataset: String,
    pub method: String,
    pub best: Option<RunRecord>,
    pub errors: Vec<String>,
}

impl BenchCell {
    pub fn failed(dataset: &Path, method: &str, error: String) -> Self {
        Self { dataset: dataset.display().to_string(), method: method.to_string(), best: None, errors: vec![error] }
    }

    fn scores(&self) -> Option<(f64, f64)> {
        let best = self.best.as_ref()?;
        Some((best.mean_nmi()?, best.mean_ari()?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchTable {
    pub datasets: Vec<String>,
    pub methods: Vec<String>,
    pub cells: Vec<BenchCell>,
}

/// Relative improvement of `ours` over `base`, in percent.
pub fn improvement_pct(ours: f64, base: f64) -> Option<f64> {
    (base.abs() > 0.0).then(|| 100.0 * (ours - base) / base.abs())
}

impl BenchTable {
    pub fn cell(&self, dataset: &str, method: &str) -> Option<&BenchCell> {
        self.cells.iter().find(|c| c.dataset == dataset && c.method == method)
    }

    /// dckm's NMI and ARI improvement over the best other method on
    /// `dataset`, each against the baseline that is best on that metric.
    pub fn improvement(&self, dataset: &str) -> Option<(f64, f64)> {
        let (nmi, ari) = self.cell(dataset, "dckm")?.scores()?;
        let baselines: Vec<(f64, f64)> = self
            .cells
            .iter()
            .filter(|c| c.dataset == dataset && c.method != "dckm")
            .filter_map(BenchCell::scores)
            .collect();
        let best_nmi = baselines.iter().map(|b| b.0).reduce(f64::max)?;
        let best_ari = baselines.iter().map(|b| b.1).reduce(f64::max)?;
        Some((improvement_pct(nmi, best_nmi)?, improvement_pct(ari, best_ari)?))
    }

    pub fn render(&self) -> String {
        let mut w = Writer::new(BENCH_KIND);
        w.kv("datasets", self.datasets.len());
        w.kv("methods", self.methods.join(","));
        for (di, dataset) in self.datasets.iter().enumerate() {
            w.kv(&format!("dataset.{di}"), dataset);
            for method in &self.methods {
                let Some(cell) = self.cell(dataset, method) else { continue };
                let prefix = format!("cell.{di}.{method}.");
                match &cell.best {
                    Some(best) => best.write_fields(&mut w, &prefix),
                    None => w.kv(&format!("{prefix}status"), "failed"),
                }
                for (e, msg) in cell.errors.iter().enumerate() {
                    w.kv(&format!("{prefix}error.{e}"), msg);
                }
            }
            if let Some((nmi, ari)) = self.improvement(dataset) {
                w.f(&format!("improvement.{di}.nmi_pct"), nmi);
                w.f(&format!("improvement.{di}.ari_pct"), ari);
            }
        }
        w.out
    }

    /// Human-readable table: rows are datasets, columns methods, cells
    /// `NMI/ARI`.
    pub fn summary(&self) -> String {
        let mut out = format!("{:<24}", "dataset");
        for m in &self.methods {
            out.push_str(&format!(" {m:>15}"));
        }
        out.push_str("  dckm gain (NMI/ARI %)\n");
        for dataset in &self.datasets {
            let name = Path::new(dataset).file_name().map_or(dataset.clone(), |f| f.to_string_lossy().into_owned());
            out.push_str(&format!("{name:<24}"));
            for m in &self.methods {
                let cell = self.cell(dataset, m).and_then(BenchCell::scores);
                match cell {
                    Some((n, a)) => out.push_str(&format!(" {:>15}", format!("{n:.4}/{a:.4}"))),
                    None => out.push_str(&format!(" {:>15}", "failed")),
                }
            }
            match self.improvement(dataset) {
                Some((n, a)) => out.push_str(&format!("  {n:+.1}/{a:+.1}\n")),
                None => out.push_str("  -\n"),
            }
        }
        out
    }
}
