//! Scoring over the 19-label inventory and the ablation harness.
//!
//! Two macro-F1 figures are computed. `macro_f1_directed` averages the
//! 18 directed non-Other classes straight off the confusion matrix.
//! `macro_f1_official` first merges each relation's two directions into
//! one type, counting a prediction as correct only when its direction
//! also matches, then averages the 9 types; wrong-direction predictions
//! hurt both precision and recall. The official figure is the headline
//! and drives model selection. Other never contributes its own term but
//! participates in denominators as usual. An absent class scores F1 = 0
//! rather than being excluded.

use serde::Serialize;

use crate::deptree::DepSentence;
use crate::label::{Label, RelType, NUM_LABELS, NUM_TYPES, OTHER_INDEX};
use crate::model::{forward, HyperConfig, Mode};
use crate::training::{samples_of, train, TrainIo};
use crate::Result;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassScores {
    pub label: String,
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
    /// Percentages in [0, 100].
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    /// `confusion[gold][pred]` counts over the 19 directed labels.
    pub confusion: Vec<Vec<usize>>,
    pub total: usize,
    /// Percentage: trace over total.
    pub accuracy: f64,
    /// One row per directed label, Other included.
    pub per_class: Vec<ClassScores>,
    /// One row per merged relation type, direction-aware.
    pub per_type: Vec<ClassScores>,
    /// Mean F1 over the 18 directed non-Other classes, percentage.
    pub macro_f1_directed: f64,
    /// Mean F1 over the 9 merged types, percentage. The headline score.
    pub macro_f1_official: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1_of(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn scores(label: String, gold: usize, predicted: usize, correct: usize) -> ClassScores {
    let p = ratio(correct, predicted);
    let r = ratio(correct, gold);
    ClassScores {
        label,
        gold,
        predicted,
        correct,
        precision: 100.0 * p,
        recall: 100.0 * r,
        f1: 100.0 * f1_of(p, r),
    }
}

/// Scores a confusion matrix of `confusion[gold][pred]` counts.
pub fn from_confusion(confusion: Vec<Vec<usize>>) -> EvalReport {
    assert_eq!(confusion.len(), NUM_LABELS, "confusion must be 19x19");
    for row in &confusion {
        assert_eq!(row.len(), NUM_LABELS, "confusion must be 19x19");
    }
    let total: usize = confusion.iter().flatten().sum();
    let trace: usize = (0..NUM_LABELS).map(|i| confusion[i][i]).sum();
    let row_sum = |i: usize| confusion[i].iter().sum::<usize>();
    let col_sum = |j: usize| confusion.iter().map(|row| row[j]).sum::<usize>();

    let per_class: Vec<ClassScores> = (0..NUM_LABELS)
        .map(|i| scores(Label::from_index(i).to_string(), row_sum(i), col_sum(i), confusion[i][i]))
        .collect();
    let macro_f1_directed = per_class
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != OTHER_INDEX)
        .map(|(_, c)| c.f1)
        .sum::<f64>()
        / (NUM_LABELS - 1) as f64;

    let per_type: Vec<ClassScores> = (0..NUM_TYPES)
        .map(|t| {
            let (a, b) = (2 * t, 2 * t + 1);
            scores(
                RelType::ALL[t].name().to_string(),
                row_sum(a) + row_sum(b),
                col_sum(a) + col_sum(b),
                confusion[a][a] + confusion[b][b],
            )
        })
        .collect();
    let macro_f1_official = per_type.iter().map(|c| c.f1).sum::<f64>() / NUM_TYPES as f64;

    EvalReport {
        confusion,
        total,
        accuracy: if total == 0 { 0.0 } else { 100.0 * trace as f64 / total as f64 },
        per_class,
        per_type,
        macro_f1_directed,
        macro_f1_official,
    }
}

/// Scores parallel gold/predicted class-index lists.
pub fn score(gold: &[usize], pred: &[usize]) -> EvalReport {
    assert_eq!(gold.len(), pred.len(), "gold/pred length mismatch: {} vs {}", gold.len(), pred.len());
    let mut confusion = vec![vec![0usize; NUM_LABELS]; NUM_LABELS];
    for (&g, &p) in gold.iter().zip(pred) {
        assert!(g < NUM_LABELS && p < NUM_LABELS, "label index out of range: gold {g}, pred {p}");
        confusion[g][p] += 1;
    }
    from_confusion(confusion)
}

/// The figure training uses to pick its best epoch: the official
/// macro-F1 on the real inventory, plain accuracy for reduced-class
/// configurations (where the merged-type structure does not exist).
pub fn selection_metric(gold: &[usize], pred: &[usize], n_classes: usize) -> f64 {
    if n_classes == NUM_LABELS {
        return score(gold, pred).macro_f1_official;
    }
    assert_eq!(gold.len(), pred.len());
    if gold.is_empty() {
        return 0.0;
    }
    let correct = gold.iter().zip(pred).filter(|(g, p)| g == p).count();
    100.0 * correct as f64 / gold.len() as f64
}

impl EvalReport {
    /// Confusion matrix as CSV; label names are quoted because they
    /// contain commas.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("\"gold\\pred\"");
        for j in 0..NUM_LABELS {
            out.push_str(&format!(",\"{}\"", Label::from_index(j)));
        }
        out.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            out.push_str(&format!("\"{}\"", Label::from_index(i)));
            for count in row {
                out.push_str(&format!(",{count}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

impl std::fmt::Display for EvalReport {
    fn fmt(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
        writeln!(f, "{:<28} {:>5} {:>5} {:>7} {:>7} {:>7} {:>7}", "class", "gold", "pred", "correct", "P", "R", "F1")?;
        for c in &self.per_class {
            writeln!(
                f,
                "{:<28} {:>5} {:>5} {:>7} {:>7.2} {:>7.2} {:>7.2}",
                c.label, c.gold, c.predicted, c.correct, c.precision, c.recall, c.f1
            )?;
        }
        writeln!(f, "macro-F1 over 18 directed classes (excl Other): {:.2}", self.macro_f1_directed)?;
        writeln!(f)?;
        writeln!(f, "{:<28} {:>5} {:>5} {:>7} {:>7} {:>7} {:>7}", "type", "gold", "pred", "correct", "P", "R", "F1")?;
        for c in &self.per_type {
            writeln!(
                f,
                "{:<28} {:>5} {:>5} {:>7} {:>7.2} {:>7.2} {:>7.2}",
                c.label, c.gold, c.predicted, c.correct, c.precision, c.recall, c.f1
            )?;
        }
        writeln!(f, "official macro-F1 over 9 types, direction-aware: {:.2}", self.macro_f1_official)?;
        writeln!(f, "accuracy: {:.2} ({} examples)", self.accuracy, self.total)
    }
}

/// One configuration to train and score.
#[derive(Clone, Debug)]
pub struct GridCell {
    pub name: String,
    pub cfg: HyperConfig,
}

#[derive(Debug)]
pub struct GridOutcome {
    pub name: String,
    pub result: Result<EvalReport>,
}

/// Trains and scores every cell with its own run; a failing cell
/// records its error and the grid carries on.
pub fn ablation_run(
    train_data: &[DepSentence],
    test_data: &[DepSentence],
    grid: &[GridCell],
) -> Vec<GridOutcome> {
    grid.iter()
        .map(|cell| GridOutcome {
            name: cell.name.clone(),
            result: run_cell(train_data, test_data, &cell.cfg),
        })
        .collect()
}

fn run_cell(train_data: &[DepSentence], test_data: &[DepSentence], cfg: &HyperConfig) -> Result<EvalReport> {
    let out = train(train_data, cfg, &TrainIo::default())?;
    let samples = samples_of(test_data, &out.vocabs);
    let gold: Vec<usize> = samples.iter().map(|s| s.class).collect();
    let pred: Vec<usize> = samples
        .iter()
        .map(|s| forward(&out.params, cfg, s, Mode::Infer).0.class)
        .collect();
    Ok(score(&gold, &pred))
}

/// The channel ablation ladder: word embeddings alone, each extra
/// channel added to the word baseline, then everything together.
pub fn channel_ladder(base: &HyperConfig) -> Vec<GridCell> {
    use crate::channels::ChannelSet;
    [
        ("word", "word"),
        ("word+pos", "word,pos"),
        ("word+gr", "word,gr"),
        ("word+wordnet", "word,wordnet"),
        ("all", "word,pos,gr,wordnet"),
    ]
    .into_iter()
    .map(|(name, list)| GridCell {
        name: name.to_string(),
        cfg: HyperConfig {
            channels: ChannelSet::parse_list(list).expect("ladder lists are valid"),
            ..base.clone()
        },
    })
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CellVariant;
    use crate::numerics::Rng;
    use crate::synth;

    // directed label indices used by the toy fixtures
    const CE_12: usize = 0; // Cause-Effect(e1,e2)
    const CE_21: usize = 1; // Cause-Effect(e2,e1)
    const ED_12: usize = 6; // Entity-Destination(e1,e2)

    /// Toy confusion over 4 distinct labels, 27 examples. Hand-derived
    /// expectations:
    ///   directed: CE(e1,e2) P=R=5/8; CE(e2,e1) P=3/4, R=1/2, F1=3/5;
    ///             ED(e1,e2) P=4/7, R=4/5, F1=2/3
    ///   merged:   CE P=8/12, R=8/14, F1=8/13; ED F1=2/3
    fn toy_pairs() -> (Vec<usize>, Vec<usize>) {
        let mut gold = Vec::new();
        let mut pred = Vec::new();
        let mut push = |g: usize, p: usize, count: usize| {
            for _ in 0..count {
                gold.push(g);
                pred.push(p);
            }
        };
        push(CE_12, CE_12, 5);
        push(CE_12, CE_21, 1);
        push(CE_12, ED_12, 1);
        push(CE_12, OTHER_INDEX, 1);
        push(CE_21, CE_12, 2);
        push(CE_21, CE_21, 3);
        push(CE_21, OTHER_INDEX, 1);
        push(ED_12, ED_12, 4);
        push(ED_12, CE_12, 1);
        push(OTHER_INDEX, OTHER_INDEX, 6);
        push(OTHER_INDEX, ED_12, 2);
        (gold, pred)
    }

    #[test]
    fn toy_confusion_matches_hand_arithmetic() {
        let (gold, pred) = toy_pairs();
        assert_eq!(gold.len(), 27);
        let report = score(&gold, &pred);

        let expect_directed = (5.0 / 8.0 + 3.0 / 5.0 + 2.0 / 3.0) / 18.0 * 100.0;
        assert!((report.macro_f1_directed - expect_directed).abs() < 1e-9);

        let expect_official = (8.0 / 13.0 + 2.0 / 3.0) / 9.0 * 100.0;
        assert!((report.macro_f1_official - expect_official).abs() < 1e-9);

        assert!((report.accuracy - 2.0 / 3.0 * 100.0).abs() < 1e-9);

        let ce = &report.per_type[0];
        assert_eq!((ce.gold, ce.predicted, ce.correct), (14, 12, 8));
        assert!((ce.f1 - 8.0 / 13.0 * 100.0).abs() < 1e-9);
    }

    #[test]
    fn perfect_predictions_over_all_directed_classes_score_100() {
        let gold: Vec<usize> = (0..NUM_LABELS - 1).collect();
        let report = score(&gold, &gold);
        assert_eq!(report.macro_f1_directed, 100.0);
        assert_eq!(report.macro_f1_official, 100.0);
        assert_eq!(report.accuracy, 100.0);
    }

    #[test]
    fn all_other_predictions_score_zero() {
        let gold = vec![CE_12, CE_21, ED_12, OTHER_INDEX];
        let pred = vec![OTHER_INDEX; 4];
        let report = score(&gold, &pred);
        assert_eq!(report.macro_f1_directed, 0.0);
        assert_eq!(report.macro_f1_official, 0.0);
        assert!((report.accuracy - 25.0).abs() < 1e-9);
        assert!(report.per_class.iter().all(|c| c.f1.is_finite()));
    }

    #[test]
    fn wrong_direction_hurts_both_precision_and_recall() {
        // every prediction has the right type but the wrong direction
        let gold = vec![CE_12, CE_12, CE_21];
        let pred = vec![CE_21, CE_21, CE_12];
        let report = score(&gold, &pred);
        assert_eq!(report.macro_f1_official, 0.0);
        assert_eq!(report.per_type[0].gold, 3);
        assert_eq!(report.per_type[0].predicted, 3);
        assert_eq!(report.per_type[0].correct, 0);
    }

    #[test]
    fn report_is_invariant_under_joint_permutation() {
        let (mut gold, mut pred) = toy_pairs();
        let before = score(&gold, &pred);
        let mut order: Vec<usize> = (0..gold.len()).collect();
        Rng::seeded(8).shuffle(&mut order);
        gold = order.iter().map(|&i| gold[i]).collect();
        pred = order.iter().map(|&i| pred[i]).collect();
        assert_eq!(score(&gold, &pred), before);
    }

    #[test]
    fn single_class_predicted_perfectly_scores_full_marks_for_it() {
        let gold = vec![ED_12; 5];
        let report = score(&gold, &gold);
        let c = &report.per_class[ED_12];
        assert_eq!((c.precision, c.recall, c.f1), (100.0, 100.0, 100.0));
        assert_eq!(report.accuracy, 100.0);
    }

    #[test]
    fn accuracy_is_trace_over_total() {
        let (gold, pred) = toy_pairs();
        let report = score(&gold, &pred);
        let trace: usize = (0..NUM_LABELS).map(|i| report.confusion[i][i]).sum();
        assert_eq!(trace, 18);
        assert_eq!(report.total, 27);
        assert!((report.accuracy - 100.0 * trace as f64 / 27.0).abs() < 1e-12);
    }

    #[test]
    fn empty_input_scores_zero_without_dividing_by_zero() {
        let report = score(&[], &[]);
        assert_eq!(report.total, 0);
        assert_eq!(report.accuracy, 0.0);
        assert!(report.macro_f1_official == 0.0);
    }

    #[test]
    fn csv_export_has_header_plus_19_rows() {
        let (gold, pred) = toy_pairs();
        let csv = score(&gold, &pred).confusion_csv();
        assert_eq!(csv.lines().count(), 20);
        assert!(csv.starts_with("\"gold\\pred\",\"Cause-Effect(e1,e2)\""));
        assert!(csv.lines().nth(19).unwrap().starts_with("\"Other\""));
    }

    #[test]
    fn json_export_carries_the_headline_figures() {
        let (gold, pred) = toy_pairs();
        let json = score(&gold, &pred).to_json();
        assert!(json.contains("macro_f1_official"));
        assert!(json.contains("macro_f1_directed"));
        assert!(json.contains("accuracy"));
    }

    #[test]
    fn selection_metric_falls_back_to_accuracy_off_inventory() {
        let gold = vec![0, 1, 2, 0];
        let pred = vec![0, 1, 1, 1];
        assert!((selection_metric(&gold, &pred, 3) - 50.0).abs() < 1e-12);
        let (g, p) = toy_pairs();
        assert_eq!(selection_metric(&g, &p, NUM_LABELS), score(&g, &p).macro_f1_official);
    }

    fn small_cfg() -> HyperConfig {
        HyperConfig {
            word_dim: 8,
            pos_dim: 4,
            gr_dim: 4,
            hypernym_dim: 4,
            hidden_dim: 8,
            epochs: 2,
            dropout_embed: 0.0,
            dropout_penultimate: 0.0,
            ..HyperConfig::default()
        }
    }

    #[test]
    fn one_cell_grid_reduces_to_train_plus_score() {
        let (train_data, test_data) = synth::generate_split(5, 40, 15);
        let cfg = small_cfg();
        let grid = vec![GridCell { name: "only".into(), cfg: cfg.clone() }];
        let outcomes = ablation_run(&train_data, &test_data, &grid);
        assert_eq!(outcomes.len(), 1);
        let from_grid = outcomes[0].result.as_ref().unwrap();
        let direct = run_cell(&train_data, &test_data, &cfg).unwrap();
        assert_eq!(*from_grid, direct);
    }

    #[test]
    fn failing_cell_does_not_abort_the_grid() {
        let (train_data, test_data) = synth::generate_split(6, 30, 10);
        let bad = HyperConfig { batch_size: 0, ..small_cfg() };
        let grid = vec![
            GridCell { name: "bad".into(), cfg: bad },
            GridCell { name: "good".into(), cfg: small_cfg() },
        ];
        let outcomes = ablation_run(&train_data, &test_data, &grid);
        assert!(outcomes[0].result.is_err());
        assert!(outcomes[1].result.is_ok());
    }

    #[test]
    fn channel_ladder_has_five_rows_mirroring_the_channel_grid() {
        let ladder = channel_ladder(&HyperConfig::default());
        assert_eq!(ladder.len(), 5);
        assert_eq!(ladder[0].name, "word");
        assert!(!ladder[0].cfg.channels.pos && !ladder[0].cfg.channels.gr && !ladder[0].cfg.channels.hypernym);
        assert!(ladder[1].cfg.channels.pos && !ladder[1].cfg.channels.gr);
        assert!(ladder[2].cfg.channels.gr && !ladder[2].cfg.channels.pos);
        assert!(ladder[3].cfg.channels.hypernym && !ladder[3].cfg.channels.pos);
        assert!(ladder[4].cfg.channels.pos && ladder[4].cfg.channels.gr && ladder[4].cfg.channels.hypernym);
    }

    #[test]
    fn identical_grid_cells_produce_identical_reports() {
        let (train_data, test_data) = synth::generate_split(7, 30, 10);
        let cfg = HyperConfig {
            channels: crate::channels::ChannelSet::word_only(),
            cell: CellVariant::Rnn,
            ..small_cfg()
        };
        let grid = vec![GridCell { name: "word".into(), cfg }];
        let a = ablation_run(&train_data, &test_data, &grid);
        let b = ablation_run(&train_data, &test_data, &grid);
        assert_eq!(a[0].result.as_ref().unwrap(), b[0].result.as_ref().unwrap());
    }
}
