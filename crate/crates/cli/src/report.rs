//! Plain-text tables and JSON documents emitted by the commands.

use adequacy::analysis::{DiscrepancyReport, InputAttribution, ModelComparison, ParameterSummary};
use serde::{Deserialize, Serialize};

pub const ADVISORY: &str = "Note: stop upgrading the model when the last retained variant reaches a sufficient \
prediction accuracy. This is a judgement for the modeller; the tool never stops on its own.";

/// Left-aligned first column, right-aligned others.
pub fn table(headers: &[String], rows: &[Vec<String>]) -> String {
    let cols = headers.len();
    let mut width: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (j, c) in r.iter().enumerate().take(cols) {
            width[j] = width[j].max(c.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (j, c) in cells.iter().enumerate() {
            if j == 0 {
                s.push_str(&format!("{c:<w$}", w = width[0]));
            } else {
                s.push_str(&format!("  {c:>w$}", w = width[j]));
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(headers);
    out.push_str(&"-".repeat(width.iter().sum::<usize>() + 2 * (cols - 1)));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
    }
    out
}

fn num(x: f64) -> String {
    if x != 0.0 && (x.abs() >= 1e5 || x.abs() < 1e-3) {
        format!("{x:.4e}")
    } else {
        format!("{x:.4}")
    }
}

fn h(s: &str) -> String {
    s.to_string()
}

pub fn parameter_table(params: &[ParameterSummary]) -> String {
    let headers = [h("parameter [unit]"), h("estimate"), h("hdi95_lo"), h("hdi95_hi")];
    let rows: Vec<Vec<String>> = params
        .iter()
        .map(|p| vec![format!("{} [{}]", p.name, p.unit), num(p.estimate), num(p.hdi.0), num(p.hdi.1)])
        .collect();
    table(&headers, &rows)
}

pub fn evidence_table(estimate: f64, hdi: (f64, f64)) -> String {
    let headers = [h("quantity"), h("estimate [log10]"), h("hdi95_lo [log10]"), h("hdi95_hi [log10]")];
    table(&headers, &[vec![h("evidence"), num(estimate), num(hdi.0), num(hdi.1)]])
}

/// Inputs sorted by decreasing R̃²; significant rows are starred.
pub fn discrepancy_table(report: &DiscrepancyReport) -> String {
    let headers = [
        h("input"),
        h("R2 [-]"),
        h("R2_lo [-]"),
        h("R2_hi [-]"),
        h("R2tilde [-]"),
        h("R2tilde_lo [-]"),
        h("R2tilde_hi [-]"),
        h("sig"),
    ];
    let row = |e: &InputAttribution| {
        vec![
            e.name.clone(),
            num(e.r2_estimate),
            num(e.r2_hdi.0),
            num(e.r2_hdi.1),
            num(e.r2_tilde_estimate),
            num(e.r2_tilde_hdi.0),
            num(e.r2_tilde_hdi.1),
            if e.significant { h("*") } else { String::new() },
        ]
    };
    let rows: Vec<Vec<String>> = report.ranking.iter().map(|&s| row(&report.per_input[s])).collect();
    let mut out = table(&headers, &rows);
    out.push_str("* R2tilde 95% HDI excludes zero\n");
    out
}

pub fn comparison_table(cmp: &ModelComparison, output_unit: &str) -> String {
    let headers = [
        h("model"),
        h("log10 Z [-]"),
        h("hdi95_lo [-]"),
        h("hdi95_hi [-]"),
        format!("RMSE [{output_unit}]"),
    ];
    let rows: Vec<Vec<String>> = cmp
        .models
        .iter()
        .map(|m| {
            vec![m.name.clone(), num(m.log10_evidence), num(m.log10_evidence_hdi.0), num(m.log10_evidence_hdi.1), num(m.rmse)]
        })
        .collect();
    let mut out = table(&headers, &rows);
    out.push('\n');
    let headers = [h("model j"), h("model i"), h("log10 B_ji [-]"), h("hdi95_lo [-]"), h("hdi95_hi [-]"), h("evidence for j")];
    let mut rows = Vec::new();
    for (j, mj) in cmp.models.iter().enumerate() {
        for (i, mi) in cmp.models.iter().enumerate() {
            if i == j {
                continue;
            }
            let b = &cmp.bayes_factors[j][i];
            rows.push(vec![mj.name.clone(), mi.name.clone(), num(b.estimate), num(b.hdi.0), num(b.hdi.1), b.label.to_string()]);
        }
    }
    out.push_str(&table(&headers, &rows));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub manifest_hash: String,
    pub model: String,
    pub report: DiscrepancyReport,
    pub ranking_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonDocument {
    pub manifest_hashes: Vec<String>,
    pub observation_hash: String,
    pub output_unit: String,
    pub comparison: ModelComparison,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryDocument {
    pub manifest_hash: String,
    pub model: String,
    pub parameters: Vec<ParameterSummary>,
    pub log10_evidence: f64,
    pub log10_evidence_hdi: (f64, f64),
    pub log10_replicates: Vec<f64>,
    pub rmse: f64,
    pub basis_size: usize,
    pub variance_explained: f64,
    pub calibration_ess: f64,
    pub discrepancy_ess: f64,
}

pub fn summary_text(doc: &SummaryDocument, output_unit: &str) -> String {
    let mut s = format!("model: {}\nmanifest: {}\n\n", doc.model, doc.manifest_hash);
    s.push_str(&parameter_table(&doc.parameters));
    s.push('\n');
    s.push_str(&evidence_table(doc.log10_evidence, doc.log10_evidence_hdi));
    s.push('\n');
    let headers = [h("diagnostic"), h("value")];
    let rows = vec![
        vec![h("basis size Q [-]"), doc.basis_size.to_string()],
        vec![h("variance explained [-]"), num(doc.variance_explained)],
        vec![format!("RMSE [{output_unit}]"), num(doc.rmse)],
        vec![h("calibration ESS [-]"), num(doc.calibration_ess)],
        vec![h("discrepancy ESS [-]"), num(doc.discrepancy_ess)],
    ];
    s.push_str(&table(&headers, &rows));
    s
}
