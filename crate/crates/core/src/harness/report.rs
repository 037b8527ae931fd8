//! Report assembly: challenge x method matrices of FPR@TPR95 and AUROC
//! in CSV (long), JSON (nested), or Markdown (matrix with row-best in
//! bold and mean / group-mean rows).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::harness::run::ChallengeResult;
use crate::{Error, Result};

/// Report group declarations: group name to member labels. A member
/// matches a row when it equals the challenge name, the OOD set name,
/// the set name without its `@s<severity>` suffix, or
/// `challenge:ood_set`.
pub type GroupMap = BTreeMap<String, Vec<String>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::InvalidArgument(format!(
                "unknown report format {other:?} (csv, json, markdown)"
            ))),
        }
    }
}

/// Which per-challenge quantity method correlations compare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationQuantity {
    Fpr,
    Auroc,
}

struct Grid {
    /// (challenge, ood_set) in first-appearance order.
    rows: Vec<(String, String)>,
    /// Methods in first-appearance order.
    methods: Vec<String>,
    cells: BTreeMap<(String, String, String), (f64, f64)>,
}

fn build_grid(results: &[ChallengeResult]) -> Result<Grid> {
    if results.is_empty() {
        return Err(Error::InvalidArgument("no results to report".into()));
    }
    let mut rows = Vec::new();
    let mut methods = Vec::new();
    let mut cells = BTreeMap::new();
    for r in results {
        let row = (r.challenge.clone(), r.ood_set.clone());
        if !rows.contains(&row) {
            rows.push(row.clone());
        }
        if !methods.contains(&r.method) {
            methods.push(r.method.clone());
        }
        cells.insert(
            (r.challenge.clone(), r.ood_set.clone(), r.method.clone()),
            (r.metric.fpr_at_tpr95, r.metric.auroc),
        );
    }
    Ok(Grid { rows, methods, cells })
}

fn row_in_group(row: &(String, String), member: &str) -> bool {
    let (challenge, ood_set) = row;
    let base = ood_set
        .rsplit_once("@s")
        .filter(|(_, s)| s.chars().all(|c| c.is_ascii_digit()) && !s.is_empty())
        .map(|(b, _)| b)
        .unwrap_or(ood_set);
    member == challenge
        || member == ood_set
        || member == base
        || member == format!("{challenge}:{ood_set}")
}

impl Grid {
    fn value(&self, row: &(String, String), method: &str) -> Option<(f64, f64)> {
        self.cells
            .get(&(row.0.clone(), row.1.clone(), method.to_string()))
            .copied()
    }

    /// Per-method mean over a set of rows; `None` when a method has no
    /// value on any selected row.
    fn mean_over(&self, selected: &[(String, String)], method: &str) -> Option<(f64, f64)> {
        let vals: Vec<(f64, f64)> = selected
            .iter()
            .filter_map(|row| self.value(row, method))
            .collect();
        if vals.is_empty() {
            return None;
        }
        let n = vals.len() as f64;
        Some((
            vals.iter().map(|v| v.0).sum::<f64>() / n,
            vals.iter().map(|v| v.1).sum::<f64>() / n,
        ))
    }
}

/// Render results in the chosen format. `groups` adds per-group mean
/// rows (Markdown/JSON); pass an empty map when no grouping applies.
pub fn report(
    results: &[ChallengeResult],
    format: ReportFormat,
    groups: &GroupMap,
) -> Result<String> {
    let grid = build_grid(results)?;
    match format {
        ReportFormat::Csv => Ok(render_csv(results)),
        ReportFormat::Json => render_json(&grid, groups),
        ReportFormat::Markdown => Ok(render_markdown(&grid, groups)),
    }
}

fn render_csv(results: &[ChallengeResult]) -> String {
    let mut out =
        String::from("challenge,ood_set,method,fpr_at_tpr95,auroc,threshold,n_id,n_ood\n");
    for r in results {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.challenge,
            r.ood_set,
            r.method,
            r.metric.fpr_at_tpr95,
            r.metric.auroc,
            r.metric.threshold,
            r.metric.n_id,
            r.metric.n_ood
        ));
    }
    out
}

fn render_json(grid: &Grid, groups: &GroupMap) -> Result<String> {
    let rows: Vec<serde_json::Value> = grid
        .rows
        .iter()
        .map(|row| {
            let cells: serde_json::Map<String, serde_json::Value> = grid
                .methods
                .iter()
                .filter_map(|m| {
                    grid.value(row, m).map(|(fpr, auroc)| {
                        (
                            m.clone(),
                            serde_json::json!({ "fpr_at_tpr95": fpr, "auroc": auroc }),
                        )
                    })
                })
                .collect();
            serde_json::json!({
                "challenge": row.0,
                "ood_set": row.1,
                "methods": cells,
            })
        })
        .collect();

    let mean_entry = |selected: &[(String, String)]| -> serde_json::Value {
        let cells: serde_json::Map<String, serde_json::Value> = grid
            .methods
            .iter()
            .filter_map(|m| {
                grid.mean_over(selected, m).map(|(fpr, auroc)| {
                    (
                        m.clone(),
                        serde_json::json!({ "fpr_at_tpr95": fpr, "auroc": auroc }),
                    )
                })
            })
            .collect();
        serde_json::Value::Object(cells)
    };

    let mut means = serde_json::Map::new();
    means.insert("overall".to_string(), mean_entry(&grid.rows));
    for (group, members) in groups {
        let selected: Vec<(String, String)> = grid
            .rows
            .iter()
            .filter(|row| members.iter().any(|m| row_in_group(row, m)))
            .cloned()
            .collect();
        if !selected.is_empty() {
            means.insert(group.clone(), mean_entry(&selected));
        }
    }

    serde_json::to_string_pretty(&serde_json::json!({
        "methods": grid.methods,
        "rows": rows,
        "means": means,
    }))
    .map_err(|e| Error::Data(format!("report json: {e}")))
}

fn render_markdown(grid: &Grid, groups: &GroupMap) -> String {
    let mut out = String::from("# OOD detection report\n");
    out.push_str(&matrix_table(grid, groups, true));
    out.push_str(&matrix_table(grid, groups, false));
    out
}

/// One Markdown matrix; FPR bolds the row minimum, AUROC the maximum.
fn matrix_table(grid: &Grid, groups: &GroupMap, fpr: bool) -> String {
    let title = if fpr {
        "\n## FPR@TPR95 (lower is better)\n\n"
    } else {
        "\n## AUROC (higher is better)\n\n"
    };
    let pick = |pair: (f64, f64)| if fpr { pair.0 } else { pair.1 };

    let mut out = String::from(title);
    out.push_str("| challenge | ood_set |");
    for m in &grid.methods {
        out.push_str(&format!(" {m} |"));
    }
    out.push('\n');
    out.push_str("|---|---|");
    out.push_str(&"---|".repeat(grid.methods.len()));
    out.push('\n');

    let fmt_cells = |values: &[Option<f64>]| -> String {
        let finite: Vec<f64> = values.iter().flatten().copied().collect();
        let best = if fpr {
            finite.iter().copied().fold(f64::INFINITY, f64::min)
        } else {
            finite.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        };
        values
            .iter()
            .map(|v| match v {
                Some(x) if finite.len() > 1 && *x == best => format!(" **{x:.4}** |"),
                Some(x) => format!(" {x:.4} |"),
                None => " - |".to_string(),
            })
            .collect()
    };

    for row in &grid.rows {
        let values: Vec<Option<f64>> = grid
            .methods
            .iter()
            .map(|m| grid.value(row, m).map(pick))
            .collect();
        out.push_str(&format!("| {} | {} |{}\n", row.0, row.1, fmt_cells(&values)));
    }

    // Mean row over everything, then one per declared group.
    let mean_row = |label: &str, selected: &[(String, String)], out: &mut String| {
        let values: Vec<Option<f64>> = grid
            .methods
            .iter()
            .map(|m| grid.mean_over(selected, m).map(pick))
            .collect();
        out.push_str(&format!("| {label} |  |{}\n", fmt_cells(&values)));
    };
    mean_row("mean", &grid.rows, &mut out);
    for (group, members) in groups {
        let selected: Vec<(String, String)> = grid
            .rows
            .iter()
            .filter(|row| members.iter().any(|m| row_in_group(row, m)))
            .cloned()
            .collect();
        if !selected.is_empty() {
            mean_row(&format!("{group} average"), &selected, &mut out);
        }
    }
    out
}

/// Static SVG line chart of FPR versus severity for each (method, OOD
/// family) series; rows without an `@s<severity>` suffix are skipped.
pub fn severity_chart_svg(results: &[ChallengeResult]) -> Result<String> {
    let mut series: BTreeMap<String, Vec<(u8, f64)>> = BTreeMap::new();
    for r in results {
        if let Some((base, sev)) = r.ood_set.rsplit_once("@s") {
            if let Ok(severity) = sev.parse::<u8>() {
                series
                    .entry(format!("{} / {}", r.method, base))
                    .or_default()
                    .push((severity, r.metric.fpr_at_tpr95));
            }
        }
    }
    if series.is_empty() {
        return Err(Error::InvalidArgument(
            "no severity-expanded results to chart".into(),
        ));
    }
    for points in series.values_mut() {
        points.sort_by_key(|p| p.0);
    }

    let (w, h, ml, mb, mt, mr) = (640.0, 400.0, 60.0, 40.0, 20.0, 180.0);
    let plot_w = w - ml - mr;
    let plot_h = h - mt - mb;
    let x = |sev: u8| ml + (sev as f64 - 1.0) / 4.0 * plot_w;
    let y = |fpr: f64| mt + (1.0 - fpr) * plot_h;

    let palette = [
        "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    ];
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    svg.push_str(&format!(
        "<rect x=\"{ml}\" y=\"{mt}\" width=\"{plot_w}\" height=\"{plot_h}\" fill=\"none\" stroke=\"#333\"/>\n"
    ));
    for sev in 1..=5u8 {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{sev}</text>\n",
            x(sev),
            h - mb + 16.0
        ));
    }
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{tick:.2}</text>\n",
            ml - 6.0,
            y(tick) + 4.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">severity</text>\n",
        ml + plot_w / 2.0,
        h - 6.0
    ));
    svg.push_str(&format!(
        "<text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">FPR@TPR95</text>\n",
        mt + plot_h / 2.0,
        mt + plot_h / 2.0
    ));

    for (idx, (label, points)) in series.iter().enumerate() {
        let color = palette[idx % palette.len()];
        let path: Vec<String> = points
            .iter()
            .map(|&(s, f)| format!("{},{}", x(s), y(f)))
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            path.join(" ")
        ));
        for &(s, f) in points {
            svg.push_str(&format!(
                "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{color}\"/>\n",
                x(s),
                y(f)
            ));
        }
        let ly = mt + 14.0 + idx as f64 * 16.0;
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            w - mr + 8.0,
            ly - 4.0,
            w - mr + 28.0,
            ly - 4.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\">{label}</text>\n",
            w - mr + 34.0,
            ly
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detectors::{ScoreRow, ScoreTable};
    use crate::metrics::MetricResult;

    fn fake_result(challenge: &str, ood_set: &str, method: &str, fpr: f64) -> ChallengeResult {
        let table = |ids: &[&str]| {
            ScoreTable::from_rows(
                ids.iter()
                    .map(|id| ScoreRow {
                        case_id: id.to_string(),
                        score: 0.5,
                    })
                    .collect(),
            )
            .unwrap()
        };
        ChallengeResult {
            challenge: challenge.to_string(),
            ood_set: ood_set.to_string(),
            method: method.to_string(),
            metric: MetricResult {
                fpr_at_tpr95: fpr,
                auroc: 1.0 - fpr,
                n_id: 2,
                n_ood: 2,
                threshold: 0.5,
            },
            id_scores: table(&["a", "b"]),
            ood_scores: table(&["c", "d"]),
        }
    }

    #[test]
    fn single_result_matrix_and_mean() {
        let results = vec![fake_result("c", "noise", "ihf-mah", 0.25)];
        let md = report(&results, ReportFormat::Markdown, &GroupMap::new()).unwrap();
        assert!(md.contains("| c | noise | 0.2500 |"), "{md}");
        assert!(md.contains("| mean |  | 0.2500 |"), "{md}");
    }

    #[test]
    fn tied_best_scores_are_both_bold() {
        let results = vec![
            fake_result("c", "noise", "m1", 0.25),
            fake_result("c", "noise", "m2", 0.25),
            fake_result("c", "noise", "m3", 0.5),
        ];
        let md = report(&results, ReportFormat::Markdown, &GroupMap::new()).unwrap();
        let row = md
            .lines()
            .find(|l| l.starts_with("| c | noise |"))
            .unwrap();
        assert_eq!(row.matches("**0.2500**").count(), 2, "{row}");
        assert!(row.contains(" 0.5000 |"), "{row}");
    }

    #[test]
    fn group_means_match_hand_averages() {
        let results = vec![
            fake_result("c", "spikeish@s1", "m1", 0.4),
            fake_result("c", "spikeish@s2", "m1", 0.2),
            fake_result("c", "other", "m1", 1.0),
        ];
        let mut groups = GroupMap::new();
        groups.insert("spiky".into(), vec!["spikeish".into()]);
        let md = report(&results, ReportFormat::Markdown, &groups).unwrap();
        // (0.4 + 0.2) / 2 = 0.3 for the group, (0.4+0.2+1.0)/3 for all.
        assert!(md.contains("| spiky average |  | 0.3000 |"), "{md}");
        assert!(md.contains(&format!("| mean |  | {:.4} |", 1.6 / 3.0)), "{md}");
    }

    #[test]
    fn csv_report_is_long_format() {
        let results = vec![
            fake_result("c", "noise", "m1", 0.25),
            fake_result("c", "noise", "m2", 0.75),
        ];
        let csv = report(&results, ReportFormat::Csv, &GroupMap::new()).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("challenge,ood_set,method"));
        assert!(lines[1].starts_with("c,noise,m1,0.25,"));
    }

    #[test]
    fn json_report_has_means() {
        let results = vec![fake_result("c", "noise", "m1", 0.25)];
        let json = report(&results, ReportFormat::Json, &GroupMap::new()).unwrap();
        let doc: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(doc["means"]["overall"]["m1"]["fpr_at_tpr95"], 0.25);
    }

    #[test]
    fn severity_chart_needs_severity_rows() {
        let plain = vec![fake_result("c", "noise", "m1", 0.25)];
        assert!(severity_chart_svg(&plain).is_err());
        let sev = vec![
            fake_result("c", "noise@s1", "m1", 0.9),
            fake_result("c", "noise@s2", "m1", 0.5),
        ];
        let svg = severity_chart_svg(&sev).unwrap();
        assert!(svg.contains("<polyline"), "{svg}");
    }
}
