//! Text tables over the record set. Every function here is pure.

use std::collections::BTreeSet;

use super::records::RunRecord;

pub const METRIC_ZSL: &str = "zsl_top1";
pub const METRIC_PARTS_F1: &str = "parts_f1";
pub const METRIC_TRE_RATIO: &str = "tre_ratio";

const LOSSES: [&str; 3] = ["none", "ac", "lc"];
const ENCODERS: [&str; 2] = ["alexnet", "basic"];
const MODEL_ORDER: [&str; 10] = [
    "fc", "vae", "bvae", "aae", "dim", "amdim", "cmdim-p1", "cmdim-p0.5", "cmdim-p0.1", "pn",
];

/// Metric of the local-feature ZSL evaluation: `mode` is the aggregation
/// (`average_representations` or `average_predictions`), `pooled` whether
/// the map is read after the final pooling layer.
pub fn local_metric(mode: &str, pooled: bool) -> String {
    format!("zsl_local_{mode}_{}", if pooled { "post_pool" } else { "pre_pool" })
}

/// Table row name of a model label such as `cmdim-p0.5` or `bvae-b4`.
pub fn model_name(label: &str) -> String {
    let (kind, rest) = label.split_once('-').unwrap_or((label, ""));
    match kind {
        "fc" => "FC".into(),
        "vae" => "VAE".into(),
        "bvae" => "beta-VAE".into(),
        "aae" => "AAE".into(),
        "dim" => "DIM".into(),
        "amdim" => "AMDIM".into(),
        "pn" => "PN".into(),
        "cmdim" => format!("CMDIM ({})", rest.replacen('p', "p=", 1)),
        other => other.to_string(),
    }
}

fn loss_name(loss: &str) -> &str {
    match loss {
        "none" => "Normal",
        "ac" => "AC",
        "lc" => "LC",
        other => other,
    }
}

fn models(records: &[RunRecord]) -> Vec<String> {
    let present: BTreeSet<&str> = records.iter().map(|r| r.objective.as_str()).collect();
    let base = |m: &str| if m.starts_with("bvae") { "bvae".to_string() } else { m.to_string() };
    let mut out: Vec<String> = Vec::new();
    for m in MODEL_ORDER {
        for p in &present {
            if base(p) == m && !out.iter().any(|o| o == p) {
                out.push(p.to_string());
            }
        }
    }
    for p in present {
        if !out.iter().any(|o| o == p) {
            out.push(p.to_string());
        }
    }
    out
}

fn datasets(records: &[RunRecord]) -> Vec<String> {
    let s: BTreeSet<&str> = records.iter().map(|r| r.dataset.as_str()).collect();
    s.into_iter().map(String::from).collect()
}

/// Mean value over seeds of the matching records.
pub fn cell_mean(records: &[RunRecord], metric: &str, dataset: &str, objective: &str, encoder: &str, loss: &str) -> Option<f64> {
    let v: Vec<f64> = records
        .iter()
        .filter(|r| {
            r.metric == metric && r.dataset == dataset && r.objective == objective && r.encoder == encoder && r.local_loss == loss
        })
        .map(|r| r.value)
        .collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn fmt(v: Option<f64>, scale: f64, digits: usize) -> String {
    v.map(|x| format!("{:.*}", digits, x * scale)).unwrap_or_else(|| "-".into())
}

fn render(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[String]| {
        let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        format!("| {} |\n", parts.join(" | "))
    };
    let mut s = line(header);
    s.push_str(&format!("|{}|\n", widths.iter().map(|w| "-".repeat(w + 2)).collect::<Vec<_>>().join("|")));
    for r in rows {
        s.push_str(&line(r));
    }
    s
}

/// ZSL top-1 (percent): rows model x dataset, columns encoder x local loss.
pub fn zsl_table(records: &[RunRecord]) -> String {
    let mut header = vec!["Model".to_string(), "Dataset".to_string()];
    for e in ENCODERS {
        for l in LOSSES {
            header.push(format!("{e} {}", loss_name(l)));
        }
    }
    let mut rows = Vec::new();
    for d in datasets(records) {
        for m in models(records) {
            let mut row = vec![model_name(&m), d.clone()];
            for e in ENCODERS {
                for l in LOSSES {
                    row.push(fmt(cell_mean(records, METRIC_ZSL, &d, &m, e, l), 100.0, 2));
                }
            }
            rows.push(row);
        }
    }
    render(&header, &rows)
}

/// Parts-F1 of one dataset and encoder: rows model, columns local loss.
pub fn parts_table(records: &[RunRecord], dataset: &str, encoder: &str) -> String {
    let header: Vec<String> = std::iter::once("Model".to_string())
        .chain(LOSSES.iter().map(|l| loss_name(l).to_string()))
        .collect();
    let rows: Vec<Vec<String>> = models(records)
        .into_iter()
        .map(|m| {
            std::iter::once(model_name(&m))
                .chain(LOSSES.iter().map(|l| fmt(cell_mean(records, METRIC_PARTS_F1, dataset, &m, encoder, l), 1.0, 3)))
                .collect()
        })
        .collect();
    render(&header, &rows)
}

/// Local-feature ZSL (percent): rows model x dataset, columns aggregation x
/// pooling, for models trained without a local loss.
pub fn local_table(records: &[RunRecord], encoder: &str) -> String {
    let cols = [
        ("Average before, pool", "average_representations", true),
        ("Average before, no pool", "average_representations", false),
        ("Average after, pool", "average_predictions", true),
        ("Average after, no pool", "average_predictions", false),
    ];
    let header: Vec<String> = ["Model", "Dataset"]
        .iter()
        .map(|s| s.to_string())
        .chain(cols.iter().map(|c| c.0.to_string()))
        .collect();
    let mut rows = Vec::new();
    for d in datasets(records) {
        for m in models(records) {
            let mut row = vec![model_name(&m), d.clone()];
            for (_, mode, pooled) in cols {
                row.push(fmt(cell_mean(records, &local_metric(mode, pooled), &d, &m, encoder, "none"), 100.0, 2));
            }
            rows.push(row);
        }
    }
    render(&header, &rows)
}

/// TRE ratio of one dataset: rows model, columns encoder x local loss.
pub fn tre_table(records: &[RunRecord], dataset: &str) -> String {
    let mut header = vec!["Model".to_string()];
    for e in ["basic", "alexnet"] {
        for l in LOSSES {
            header.push(format!("{e} {}", loss_name(l)));
        }
    }
    let rows: Vec<Vec<String>> = models(records)
        .into_iter()
        .map(|m| {
            let mut row = vec![model_name(&m)];
            for e in ["basic", "alexnet"] {
                for l in LOSSES {
                    row.push(fmt(cell_mean(records, METRIC_TRE_RATIO, dataset, &m, e, l), 1.0, 3));
                }
            }
            row
        })
        .collect();
    render(&header, &rows)
}

/// `(model, loss, (acc_loss - acc_normal) / acc_normal)` for the AC and LC
/// cells that have a Normal counterpart.
pub fn relative_improvements(records: &[RunRecord], dataset: &str, encoder: &str) -> Vec<(String, String, f64)> {
    let mut out = Vec::new();
    for m in models(records) {
        let Some(base) = cell_mean(records, METRIC_ZSL, dataset, &m, encoder, "none") else {
            continue;
        };
        if base == 0.0 {
            continue;
        }
        for l in ["ac", "lc"] {
            if let Some(v) = cell_mean(records, METRIC_ZSL, dataset, &m, encoder, l) {
                out.push((model_name(&m), loss_name(l).to_string(), (v - base) / base));
            }
        }
    }
    out
}

/// `(model label, loss, parts_f1, zsl_top1)` for every cell with both.
pub fn locality_pairs(records: &[RunRecord], dataset: &str, encoder: &str) -> Vec<(String, String, f64, f64)> {
    let mut out = Vec::new();
    for m in models(records) {
        for l in LOSSES {
            if let (Some(f), Some(z)) = (
                cell_mean(records, METRIC_PARTS_F1, dataset, &m, encoder, l),
                cell_mean(records, METRIC_ZSL, dataset, &m, encoder, l),
            ) {
                out.push((m.clone(), l.to_string(), f, z));
            }
        }
    }
    out
}
