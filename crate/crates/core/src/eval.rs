//! Retrieval-quality evaluation: mean NDCG@k and query-length statistics for
//! raw queries or any rewriter/retriever pairing, including the full
//! cross-pairing matrix.
//!
//! Evaluation decodes greedily (argmax actions), so reported numbers are
//! reproducible run to run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::Rewriter;
use crate::retrieval::Retriever;
use crate::reward::RewardEvaluator;
use crate::synth::QuerySample;

/// Aggregated results for one (retriever, rewriter) pairing. Lengths are in
/// characters; `mean_ndcg` is the plain arithmetic mean in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub retriever: String,
    pub rewriter: String,
    pub mean_ndcg: f64,
    pub mean_original_len: f64,
    pub mean_rewritten_len: f64,
    pub per_sample_ndcg: Vec<f64>,
}

impl EvalReport {
    /// Mean NDCG as a percentage, the way comparison tables report it.
    pub fn mean_percent(&self) -> f64 {
        self.mean_ndcg * 100.0
    }
}

/// Evaluate a dataset against one retriever, optionally rewriting each query
/// with greedy decoding first.
pub fn evaluate(
    dataset: &[QuerySample],
    retriever: &dyn Retriever,
    rewriter: Option<&Rewriter>,
    evaluator: &RewardEvaluator,
) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let store_len = evaluator.store_len();
    let k = evaluator.config().ndcg_k;
    let mut per_sample = Vec::with_capacity(dataset.len());
    let mut original_len = 0.0;
    let mut rewritten_len = 0.0;
    for sample in dataset {
        if sample.target_index as usize >= store_len {
            return Err(Error::TargetOutOfRange {
                target: sample.target_index,
                len: store_len,
            });
        }
        let query = match rewriter {
            Some(r) => r.rewrite_greedy(&sample.query),
            None => sample.query.clone(),
        };
        let ranked = retriever.search(&query, k)?;
        per_sample.push(evaluator.ndcg(&ranked, sample.target_index)?);
        original_len += sample.query.chars().count() as f64;
        rewritten_len += query.chars().count() as f64;
    }
    let n = dataset.len() as f64;
    Ok(EvalReport {
        retriever: retriever.name().to_string(),
        rewriter: rewriter.map_or_else(|| "raw".to_string(), |r| r.name.clone()),
        mean_ndcg: per_sample.iter().sum::<f64>() / n,
        mean_original_len: original_len / n,
        mean_rewritten_len: rewritten_len / n,
        per_sample_ndcg: per_sample,
    })
}

/// One report per (retriever, rewriter) pair plus a raw baseline per
/// retriever, in retriever-major order.
pub fn cross_matrix(
    dataset: &[QuerySample],
    retrievers: &[&dyn Retriever],
    rewriters: &[&Rewriter],
    evaluator: &RewardEvaluator,
) -> Result<Vec<EvalReport>> {
    let mut reports = Vec::with_capacity(retrievers.len() * (rewriters.len() + 1));
    for retriever in retrievers {
        reports.push(evaluate(dataset, *retriever, None, evaluator)?);
        for rewriter in rewriters {
            reports.push(evaluate(dataset, *retriever, Some(rewriter), evaluator)?);
        }
    }
    Ok(reports)
}

/// Aligned text table with NDCG as a two-decimal percentage.
pub fn render_table(reports: &[EvalReport], ndcg_k: usize) -> String {
    let header_metric = format!("NDCG@{ndcg_k} (%)");
    let mut rows = vec![[
        "Retriever".to_string(),
        "Rewriter".to_string(),
        header_metric,
        "Len orig".to_string(),
        "Len rewrite".to_string(),
    ]];
    for r in reports {
        rows.push([
            r.retriever.clone(),
            r.rewriter.clone(),
            format!("{:.2}", r.mean_percent()),
            format!("{:.1}", r.mean_original_len),
            format!("{:.1}", r.mean_rewritten_len),
        ]);
    }
    let mut widths = [0usize; 5];
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<w$}"))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}

/// CSV form of the same table.
pub fn render_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("retriever,rewriter,mean_ndcg_percent,mean_original_len,mean_rewritten_len\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{:.2},{:.2},{:.2}\n",
            r.retriever,
            r.rewriter,
            r.mean_percent(),
            r.mean_original_len,
            r.mean_rewritten_len
        ));
    }
    out
}
