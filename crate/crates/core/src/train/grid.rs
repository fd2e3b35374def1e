//! Sequence-length × step-budget grid: fine-tune once per cell, then score
//! greedy predictions on a held-out set.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{discard, encode_target, finetune, generate, Checkpoint, Mode, Start, TrainError, TrainingRunConfig};
use crate::corpus::Sample;
use crate::metrics::{evaluate, exact_match, CodeBleuWeights};
use crate::tokenizer::Vocabulary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub input_len: usize,
    pub target_len: usize,
    pub steps: u64,
    pub bleu: f64,
    pub em: f64,
    pub codebleu: f64,
    pub final_loss: f64,
    /// Evaluation samples whose encoded code plus eos exceeds `target_len`.
    pub truncated_samples: usize,
    /// EM over the truncated samples only; `None` when there are none.
    pub truncated_em: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub rows: Vec<GridRow>,
}

impl GridReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "| input | target | steps | BLEU | EM | CodeBLEU | loss | truncated | EM (truncated) |");
        let _ = writeln!(s, "|---:|---:|---:|---:|---:|---:|---:|---:|---:|");
        for r in &self.rows {
            let tem = r.truncated_em.map_or("n/a".to_string(), |x| format!("{x:.2}"));
            let _ = writeln!(
                s,
                "| {} | {} | {} | {:.2} | {:.2} | {:.2} | {:.4} | {} | {} |",
                r.input_len, r.target_len, r.steps, r.bleu, r.em, r.codebleu, r.final_loss, r.truncated_samples, tem
            );
        }
        s
    }
}

/// Runs every config in order. `init` seeds each cell with the same
/// pretrained weights; without it each cell starts from random weights.
pub fn run_grid(
    configs: &[TrainingRunConfig],
    vocab: &Vocabulary,
    train: &[Sample],
    eval: &[Sample],
    init: Option<&Checkpoint>,
    weights: &CodeBleuWeights,
) -> Result<GridReport, TrainError> {
    let inputs: Vec<String> = eval.iter().map(|s| s.nl.clone()).collect();
    let refs: Vec<Vec<String>> = eval.iter().map(|s| vec![s.code.clone()]).collect();
    let mut rows = Vec::with_capacity(configs.len());
    for cfg in configs {
        if cfg.mode != Mode::Finetune {
            return Err(TrainError::InvalidConfig("grid cells must be fine-tuning runs".into()));
        }
        let start = init.map_or(Start::Fresh, |c| Start::Transfer(c.clone()));
        let out = finetune(cfg, vocab, train, start, &mut discard)?;
        let preds = generate(&out.checkpoint.params, vocab, &inputs, cfg.input_len, cfg.target_len)?;
        let report = evaluate(&preds, &refs, weights)?;
        let cut: Vec<usize> = (0..eval.len()).filter(|&i| encode_target(vocab, &eval[i].code, cfg.target_len).1).collect();
        let truncated_em = if cut.is_empty() {
            None
        } else {
            let c: Vec<&str> = cut.iter().map(|&i| preds[i].as_str()).collect();
            let r: Vec<Vec<&str>> = cut.iter().map(|&i| vec![eval[i].code.as_str()]).collect();
            Some(exact_match(&c, &r)?.score)
        };
        log::info!("grid cell {}/{} steps {}: BLEU {:.2}", cfg.input_len, cfg.target_len, cfg.steps, report.bleu);
        rows.push(GridRow {
            input_len: cfg.input_len,
            target_len: cfg.target_len,
            steps: cfg.steps,
            bleu: report.bleu,
            em: report.em,
            codebleu: report.codebleu,
            final_loss: out.summary.final_loss,
            truncated_samples: cut.len(),
            truncated_em,
        });
    }
    Ok(GridReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;
    use crate::model::ModelConfig;

    #[test]
    fn grid_has_one_row_per_cell_and_counts_truncation() {
        let vocab = Vocabulary::train(&["int a = 1 ;", "return a ;", "set a", "give a"], 380).unwrap();
        let samples: Vec<Sample> = [("set a", "int a = 1 ;"), ("give a", "return a ;")]
            .iter()
            .enumerate()
            .map(|(id, (nl, code))| Sample { id, nl: nl.to_string(), code: code.to_string(), split: Split::Train })
            .collect();
        let model = ModelConfig { num_layers: 1, d_model: 8, num_heads: 2, d_ff: 16, vocab_size: vocab.len(), num_rel_buckets: 4, max_rel_distance: 8, dropout: 0.0 };
        let cells: Vec<TrainingRunConfig> = [(8, 3, 2), (8, 32, 4)]
            .iter()
            .map(|&(i, t, s)| {
                let mut c = TrainingRunConfig::new(Mode::Finetune, s, 2, i, t, 1);
                c.model = Some(model.clone());
                c
            })
            .collect();
        let g = run_grid(&cells, &vocab, &samples, &samples, None, &CodeBleuWeights::default()).unwrap();
        assert_eq!(g.rows.len(), 2);
        assert_eq!((g.rows[0].steps, g.rows[1].steps), (2, 4));
        assert_eq!(g.rows[0].truncated_samples, 2);
        assert_eq!(g.rows[0].truncated_em, Some(0.0));
        assert_eq!((g.rows[1].truncated_samples, g.rows[1].truncated_em), (0, None));
        assert_eq!(g.render().lines().count(), 4);
    }
}
