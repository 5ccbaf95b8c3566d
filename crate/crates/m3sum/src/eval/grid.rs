//! Many-to-many evaluation: generate for each requested direction, score
//! against gold summaries, and lay the results out as a source-by-target
//! grid with per-source-row averages.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::data::{make_batch, Sample, VisionRecord, Vocab, RESERVED_TOKENS};
use crate::error::{Error, Result};
use crate::eval::rouge::{rouge_report, RougeReport, RougeScore};
use crate::eval::{generate, BeamConfig};
use crate::model::{ModelConfig, ParamSet};

/// Borrowed state an evaluation pass reads.
pub struct EvalSpec<'a> {
    pub model: &'a ModelConfig,
    pub params: &'a ParamSet<f32>,
    pub beam: &'a BeamConfig,
    pub vocab: &'a Vocab,
    pub samples: &'a [Sample],
    pub vision: &'a BTreeMap<String, VisionRecord>,
}

/// Mean scores over one direction's samples. Score fields hold arithmetic
/// means of the per-sample values; `empty_references` counts samples whose
/// reference produced no units for some variant.
#[derive(Debug, Clone, Serialize)]
pub struct GridCell {
    pub src: String,
    pub tgt: String,
    pub n_samples: usize,
    pub r1: RougeScore,
    pub r2: RougeScore,
    pub rl: RougeScore,
    pub empty_references: usize,
}

/// Per-source-row F1 averages over the row's cells.
#[derive(Debug, Clone, Serialize)]
pub struct RowAverage {
    pub src: String,
    pub n_cells: usize,
    pub r1_f1: f64,
    pub r2_f1: f64,
    pub rl_f1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalGrid {
    pub cells: Vec<GridCell>,
    pub rows: Vec<RowAverage>,
}

/// Drop reserved ids (padding, begin/end markers, unknown) before scoring;
/// overlap should measure content only.
fn content_ids(ids: &[usize]) -> Vec<usize> {
    ids.iter().copied().filter(|&id| id >= RESERVED_TOKENS).collect()
}

fn mean_scores(per_sample: &[RougeScore]) -> RougeScore {
    let n = per_sample.len() as f64;
    let sum = |f: fn(&RougeScore) -> f64| per_sample.iter().map(f).sum::<f64>() / n;
    RougeScore {
        p: sum(|s| s.p),
        r: sum(|s| s.r),
        f1: sum(|s| s.f1),
        empty_reference: per_sample.iter().any(|s| s.empty_reference),
    }
}

/// Average per-pair reports into one cell.
pub fn cell_from_reports(src: &str, tgt: &str, reports: &[RougeReport]) -> Result<GridCell> {
    if reports.is_empty() {
        return Err(Error::data(format!("direction {src}->{tgt} scored no samples")));
    }
    let r1: Vec<RougeScore> = reports.iter().map(|r| r.r1).collect();
    let r2: Vec<RougeScore> = reports.iter().map(|r| r.r2).collect();
    let rl: Vec<RougeScore> = reports.iter().map(|r| r.rl).collect();
    let empty = reports
        .iter()
        .filter(|r| r.r1.empty_reference || r.r2.empty_reference || r.rl.empty_reference)
        .count();
    Ok(GridCell {
        src: src.to_string(),
        tgt: tgt.to_string(),
        n_samples: reports.len(),
        r1: mean_scores(&r1),
        r2: mean_scores(&r2),
        rl: mean_scores(&rl),
        empty_references: empty,
    })
}

/// Generate and score every requested `(src, tgt)` direction.
pub fn eval_grid(spec: &EvalSpec, directions: &[(String, String)]) -> Result<EvalGrid> {
    if directions.is_empty() {
        return Err(Error::config("no directions requested"));
    }
    spec.beam.validate(spec.model)?;
    let mut cells = Vec::with_capacity(directions.len());
    for (src, tgt) in directions {
        spec.vocab.lang_tag_id(src)?;
        spec.vocab.lang_tag_id(tgt)?;
        let in_tgt: Vec<&Sample> =
            spec.samples.iter().filter(|s| &s.lang == tgt).collect();
        if in_tgt.is_empty() {
            return Err(Error::data(format!(
                "direction {src}->{tgt}: corpus has no samples in language {tgt}"
            )));
        }
        let batch = make_batch(&in_tgt, (src, tgt), spec.vocab, spec.model, spec.vision)?;
        let mut reports = Vec::with_capacity(batch.len());
        for i in 0..batch.len() {
            let out = generate(
                spec.model,
                spec.params,
                &batch.src_ids[i],
                &batch.src_mask[i],
                &batch.vision[i],
                spec.beam,
            )?;
            let cand = content_ids(&out.tokens);
            let gold = content_ids(&batch.tgt_ids[i]);
            reports.push(rouge_report(&cand, &gold)?);
        }
        cells.push(cell_from_reports(src, tgt, &reports)?);
    }
    let rows = row_averages(&cells);
    Ok(EvalGrid { cells, rows })
}

fn row_averages(cells: &[GridCell]) -> Vec<RowAverage> {
    let mut order: Vec<&str> = Vec::new();
    for c in cells {
        if !order.contains(&c.src.as_str()) {
            order.push(&c.src);
        }
    }
    order
        .into_iter()
        .map(|src| {
            let row: Vec<&GridCell> = cells.iter().filter(|c| c.src == src).collect();
            let n = row.len() as f64;
            RowAverage {
                src: src.to_string(),
                n_cells: row.len(),
                r1_f1: row.iter().map(|c| c.r1.f1).sum::<f64>() / n,
                r2_f1: row.iter().map(|c| c.r2.f1).sum::<f64>() / n,
                rl_f1: row.iter().map(|c| c.rl.f1).sum::<f64>() / n,
            }
        })
        .collect()
}

/// Fixed-width table, one row per source language, one column per target,
/// cells as `R1/R2/RL` F1 values, plus the row-average column.
pub fn render_grid_table(grid: &EvalGrid) -> String {
    let mut tgts: Vec<&str> = Vec::new();
    for c in &grid.cells {
        if !tgts.contains(&c.tgt.as_str()) {
            tgts.push(&c.tgt);
        }
    }
    // Cell content "0.1234/0.1234/0.1234" is 20 chars; 22 leaves a gutter.
    let cell_w = 22;
    let mut out = String::new();
    out.push_str(&format!("{:<8}", "src\\tgt"));
    for t in &tgts {
        out.push_str(&format!("{t:<cell_w$}"));
    }
    out.push_str("avg(R1/R2/RL)\n");
    for row in &grid.rows {
        out.push_str(&format!("{:<8}", row.src));
        for t in &tgts {
            match grid.cells.iter().find(|c| c.src == row.src && &c.tgt == t) {
                Some(c) => out.push_str(&format!(
                    "{:<cell_w$}",
                    format!("{:.4}/{:.4}/{:.4}", c.r1.f1, c.r2.f1, c.rl.f1)
                )),
                None => out.push_str(&format!("{:<cell_w$}", "-")),
            }
        }
        out.push_str(&format!(
            "{:.4}/{:.4}/{:.4}\n",
            row.r1_f1, row.r2_f1, row.rl_f1
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(cand: &[usize], gold: &[usize]) -> RougeReport {
        rouge_report(cand, gold).unwrap()
    }

    #[test]
    fn identity_pairs_score_one_everywhere() {
        let golds = [vec![5usize, 6, 7], vec![8, 9, 10, 11]];
        let reports: Vec<RougeReport> =
            golds.iter().map(|g| report(g, g)).collect();
        let cell = cell_from_reports("en", "en", &reports).unwrap();
        for sc in [cell.r1, cell.r2, cell.rl] {
            assert_eq!((sc.p, sc.r, sc.f1), (1.0, 1.0, 1.0));
        }
        assert_eq!(cell.empty_references, 0);
    }

    #[test]
    fn row_average_is_arithmetic_mean_of_cells() {
        let mk = |src: &str, tgt: &str, f1: f64| GridCell {
            src: src.into(),
            tgt: tgt.into(),
            n_samples: 1,
            r1: RougeScore { p: f1, r: f1, f1, empty_reference: false },
            r2: RougeScore { p: 0.0, r: 0.0, f1: 0.0, empty_reference: false },
            rl: RougeScore { p: f1, r: f1, f1, empty_reference: false },
            empty_references: 0,
        };
        let cells = vec![mk("en", "en", 0.25), mk("en", "ru", 0.75), mk("ru", "en", 1.0)];
        let rows = row_averages(&cells);
        assert_eq!(rows.len(), 2);
        assert!((rows[0].r1_f1 - 0.5).abs() < 1e-12);
        assert!((rows[1].r1_f1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reserved_ids_are_stripped_before_scoring() {
        assert_eq!(content_ids(&[0, 1, 2, 3, 4, 9, 0]), vec![4, 9]);
    }

    #[test]
    fn table_renders_every_direction() {
        let mk = |src: &str, tgt: &str| GridCell {
            src: src.into(),
            tgt: tgt.into(),
            n_samples: 2,
            r1: RougeScore { p: 0.5, r: 0.5, f1: 0.5, empty_reference: false },
            r2: RougeScore { p: 0.25, r: 0.25, f1: 0.25, empty_reference: false },
            rl: RougeScore { p: 0.5, r: 0.5, f1: 0.5, empty_reference: false },
            empty_references: 0,
        };
        let cells = vec![mk("en", "en"), mk("en", "ru")];
        let rows = row_averages(&cells);
        let text = render_grid_table(&EvalGrid { cells, rows });
        assert!(text.contains("src\\tgt"));
        assert!(text.contains("0.5000/0.2500/0.5000"));
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
    }
}
