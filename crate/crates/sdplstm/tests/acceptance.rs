//! Release gate. Every check prints one line; the test fails only after
//! all lines are out, so a red run still shows the full picture.

use std::collections::{HashSet, VecDeque};
use std::time::Instant;

use sdplstm::channels::{dropout_mask, ChannelMaps, Vocabs};
use sdplstm::deptree::{extract_sdp, parse_sdpc, DepSentence, Token};
use sdplstm::evaluation::{ablation_run, channel_ladder, from_confusion, score};
use sdplstm::label::{Label, NUM_LABELS};
use sdplstm::model::{forward, penalty, HyperConfig, Mode, ModelParams, PathVariant};
use sdplstm::numerics::Rng;
use sdplstm::recurrent::{lstm_forward, LstmParams};
use sdplstm::synth;
use sdplstm::training::{grad_check, samples_of, train, TrainIo};
use tempfile::TempDir;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

use Outcome::{Fail, Pass, Skip};

fn label_index(name: &str) -> usize {
    name.parse::<Label>().expect("known label").index()
}

/// Independent shortest-path oracle: breadth-first search over the
/// undirected tree edges.
fn bfs_path(heads: &[Option<usize>], from: usize, to: usize) -> Vec<usize> {
    let n = heads.len();
    let mut adj = vec![Vec::new(); n];
    for (i, h) in heads.iter().enumerate() {
        if let Some(h) = h {
            adj[i].push(*h);
            adj[*h].push(i);
        }
    }
    let mut parent = vec![usize::MAX; n];
    parent[from] = from;
    let mut queue = VecDeque::from([from]);
    while let Some(u) = queue.pop_front() {
        if u == to {
            break;
        }
        for &v in &adj[u] {
            if parent[v] == usize::MAX {
                parent[v] = u;
                queue.push_back(v);
            }
        }
    }
    let mut path = vec![to];
    while *path.last().unwrap() != from {
        path.push(parent[*path.last().unwrap()]);
    }
    path.reverse();
    path
}

fn random_tree_sentence(rng: &mut Rng) -> DepSentence {
    let n = 2 + rng.below(29);
    let mut placement: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut placement);
    let mut heads: Vec<Option<usize>> = vec![None; n];
    for i in 1..n {
        heads[placement[i]] = Some(placement[rng.below(i)]);
    }
    let tokens = (0..n)
        .map(|i| Token {
            form: format!("t{i}"),
            pos: "NN".to_string(),
            hypernym: None,
            head: heads[i],
            deprel: if heads[i].is_none() { "root".to_string() } else { "dep".to_string() },
        })
        .collect();
    let mut a = rng.below(n);
    let mut b = rng.below(n);
    if a == b {
        b = (a + 1) % n;
    }
    if a > b {
        std::mem::swap(&mut a, &mut b);
    }
    DepSentence { tokens, e1: a..a + 1, e2: b..b + 1, relation: Label::Other }
}

fn shortest_path_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = Rng::seeded(777);
    for case in 0..1000 {
        let sent = random_tree_sentence(&mut rng);
        let heads: Vec<Option<usize>> = sent.tokens.iter().map(|t| t.head).collect();
        let expect = bfs_path(&heads, sent.e1.start, sent.e2.start);

        let sdp = extract_sdp(&sent);
        let mut joined = sdp.left_nodes.clone();
        joined.extend(sdp.right_nodes.iter().rev().skip(1));

        let got_set: HashSet<usize> = joined.iter().copied().collect();
        let want_set: HashSet<usize> = expect.iter().copied().collect();
        if got_set != want_set {
            return Fail(format!("case {case}: node sets differ: {got_set:?} vs {want_set:?}"));
        }
        if joined != expect {
            return Fail(format!(
                "case {case}: recombined sub-paths {joined:?} differ from the full path {expect:?}"
            ));
        }
    }
    let secs = started.elapsed().as_secs_f64();
    if secs >= 5.0 {
        return Fail(format!("1000 trees agree but took {secs:.1}s (limit 5s)"));
    }
    Pass(format!("1000/1000 random trees match the search oracle in {secs:.2}s"))
}

fn gradient_audit() -> Outcome {
    let started = Instant::now();
    let cells = grad_check();
    let secs = started.elapsed().as_secs_f64();
    let failed: Vec<String> = cells.iter().filter(|c| !c.passed).map(|c| c.label()).collect();
    if !failed.is_empty() {
        return Fail(format!("{}/{} cells failed: {}", failed.len(), cells.len(), failed.join(", ")));
    }
    if secs >= 60.0 {
        return Fail(format!("all cells pass but took {secs:.1}s (limit 60s)"));
    }
    let worst = cells
        .iter()
        .flat_map(|c| c.tensors.iter())
        .map(|t| t.max_rel)
        .fold(0.0f64, f64::max);
    Pass(format!(
        "{} cells within p99 < 1e-4 and max < 1e-3 (worst rel {worst:.1e}) in {secs:.2}s",
        cells.len()
    ))
}

fn zeroed(mut params: ModelParams) -> ModelParams {
    for t in params.dense_tensors_mut() {
        for v in t.data {
            *v = 0.0;
        }
    }
    for table in &mut params.embeddings {
        for r in 0..table.rows() {
            for c in 0..table.dim() {
                table.vectors.set(r, c, 0.0);
            }
        }
    }
    params
}

fn sample_corpus() -> Vec<DepSentence> {
    let mut sents = parse_sdpc(include_str!("data/fig1.sdpc")).expect("fixture parses");
    sents.extend(synth::generate(91, 8));
    sents
}

fn zero_network() -> Outcome {
    let mut rng = Rng::seeded(5);
    let p = LstmParams::zeros(7, 3);
    for len in 1..=6 {
        let xs: Vec<_> = (0..len)
            .map(|_| {
                let mut x = sdplstm::numerics::Vector::zeros(3);
                for k in 0..3 {
                    x[k] = rng.uniform(-2.0, 2.0);
                }
                x
            })
            .collect();
        let (hs, _) = lstm_forward(&p, &xs, None);
        for (t, h) in hs.iter().enumerate() {
            for k in 0..h.len() {
                if h[k] != 0.0 {
                    return Fail(format!("zero cell emitted h[{t}][{k}] = {}", h[k]));
                }
            }
        }
    }

    let sents = sample_corpus();
    let cfg = HyperConfig::default();
    let vocabs = Vocabs::build(&sents, 1, ChannelMaps::default());
    let params = zeroed(ModelParams::init(&cfg, &vocabs, &mut rng));
    let uniform = 1.0 / NUM_LABELS as f64;
    let mut worst = 0.0f64;
    for sample in &samples_of(&sents, &vocabs) {
        let (pred, _) = forward(&params, &cfg, sample, Mode::Infer);
        for k in 0..pred.probs.len() {
            worst = worst.max((pred.probs[k] - uniform).abs());
        }
    }
    if worst > 1e-12 {
        return Fail(format!("softmax deviates from 1/19 by {worst:.3e} (limit 1e-12)"));
    }
    Pass(format!(
        "zero cells stay silent; softmax uniform to {worst:.1e} on {} inputs",
        sents.len()
    ))
}

fn objective_sanity() -> Outcome {
    let sents = sample_corpus();
    let cfg = HyperConfig::default();
    let vocabs = Vocabs::build(&sents, 1, ChannelMaps::default());
    let mut rng = Rng::seeded(6);
    let mut params = zeroed(ModelParams::init(&cfg, &vocabs, &mut rng));

    let expected = (NUM_LABELS as f64).ln();
    for sample in &samples_of(&sents, &vocabs) {
        let (pred, _) = forward(&params, &cfg, sample, Mode::Infer);
        let err = (pred.cross_entropy - expected).abs();
        if err > 1e-9 {
            return Fail(format!("uniform cross-entropy off ln 19 by {err:.3e} (limit 1e-9)"));
        }
    }

    // 0.5^2 + 1.5^2 + 2^2 + 2.5^2 + 3^2 + 0.25^2 = 21.8125, all values
    // exactly representable.
    let fixed = [0.5, -1.5, 2.0, -2.5, 3.0, 0.25];
    {
        let mut tensors = params.dense_tensors_mut();
        let out_w = tensors.iter_mut().find(|t| t.name == "out.w").expect("output matrix");
        assert!(out_w.penalized);
        out_w.data[..fixed.len()].copy_from_slice(&fixed);
    }
    if penalty(&params) != 21.8125 {
        return Fail(format!("Frobenius sum {} differs from the worked value 21.8125", penalty(&params)));
    }
    params.b_out[0] = 100.0;
    params.embeddings[0].vectors.set(0, 0, 100.0);
    if penalty(&params) != 21.8125 {
        return Fail("biases or embeddings leaked into the weight penalty".to_string());
    }
    Pass("uniform cross-entropy equals ln 19 to 1e-9; penalty matches worked Frobenius arithmetic".to_string())
}

fn accuracy_on(test: &[DepSentence], out: &sdplstm::training::TrainOutput, cfg: &HyperConfig) -> f64 {
    let samples = samples_of(test, &out.vocabs);
    let gold: Vec<usize> = samples.iter().map(|s| s.class).collect();
    let pred: Vec<usize> =
        samples.iter().map(|s| forward(&out.params, cfg, s, Mode::Infer).0.class).collect();
    score(&gold, &pred).accuracy
}

fn synthetic_learnability() -> Outcome {
    let (train_data, test_data) = synth::generate_split(42, 2000, 500);

    let split_cfg = HyperConfig::default();
    let started = Instant::now();
    let split_out = match train(&train_data, &split_cfg, &TrainIo::default()) {
        Ok(o) => o,
        Err(e) => return Fail(format!("split-path training failed: {e}")),
    };
    let split_secs = started.elapsed().as_secs_f64();
    let split_acc = accuracy_on(&test_data, &split_out, &split_cfg);

    let full_cfg = HyperConfig { path: PathVariant::Full, ..HyperConfig::default() };
    let full_out = match train(&train_data, &full_cfg, &TrainIo::default()) {
        Ok(o) => o,
        Err(e) => return Fail(format!("full-path training failed: {e}")),
    };
    let full_acc = accuracy_on(&test_data, &full_out, &full_cfg);

    let detail = format!(
        "split {split_acc:.1}% in {} epochs / {split_secs:.0}s; full {full_acc:.1}%",
        split_out.state.epochs_run
    );
    if split_out.state.epochs_run > 30 {
        return Fail(format!("{detail}; split needed more than 30 epochs"));
    }
    if split_secs >= 120.0 {
        return Fail(format!("{detail}; split exceeded the 2-minute budget"));
    }
    if split_acc < 95.0 {
        return Fail(format!("{detail}; split below 95%"));
    }
    if split_acc - full_acc < 5.0 {
        return Fail(format!("{detail}; gap under 5 points"));
    }
    Pass(detail)
}

fn dropout_statistics() -> Outcome {
    let mut rng = Rng::seeded(123);
    let coords = 1_000_000;
    let mask = dropout_mask(coords, 0.5, &mut rng);
    let zero_frac = (0..coords).filter(|&i| mask[i] == 0.0).count() as f64 / coords as f64;

    let mut data = sdplstm::numerics::Vector::zeros(coords);
    for i in 0..coords {
        data[i] = rng.uniform(0.5, 1.5);
    }
    let mean: f64 = (0..coords).map(|i| data[i]).sum::<f64>() / coords as f64;
    let masked_mean: f64 = (0..coords).map(|i| data[i] * mask[i]).sum::<f64>() / coords as f64;
    let mean_err = (masked_mean - mean).abs() / mean;

    if !(0.498..=0.502).contains(&zero_frac) {
        return Fail(format!("zeroed fraction {zero_frac:.4} outside [0.498, 0.502]"));
    }
    if mean_err > 0.01 {
        return Fail(format!("mean drifted by {:.2}% (limit 1%)", mean_err * 100.0));
    }
    Pass(format!(
        "zeroed fraction {zero_frac:.4}; mean preserved to {:.3}% over 1e6 coordinates",
        mean_err * 100.0
    ))
}

fn scoring_oracle() -> Outcome {
    let ce12 = label_index("Cause-Effect(e1,e2)");
    let ce21 = label_index("Cause-Effect(e2,e1)");
    let ed12 = label_index("Entity-Destination(e1,e2)");
    let other = Label::Other.index();

    let mut confusion = vec![vec![0usize; NUM_LABELS]; NUM_LABELS];
    confusion[ce12][ce12] = 5;
    confusion[ce12][ce21] = 1;
    confusion[ce12][ed12] = 1;
    confusion[ce12][other] = 1;
    confusion[ce21][ce12] = 2;
    confusion[ce21][ce21] = 3;
    confusion[ce21][other] = 1;
    confusion[ed12][ed12] = 4;
    confusion[ed12][ce12] = 1;
    confusion[other][other] = 6;
    confusion[other][ed12] = 2;

    // Merged Cause-Effect: P = 8/12, R = 8/14, F1 = 8/13. Merged
    // Entity-Destination: P = 4/7, R = 4/5, F1 = 2/3. Mean over the nine
    // types: (8/13 + 2/3) / 9 * 100 = 5000/351.
    let report = from_confusion(confusion);
    let expected = 5000.0 / 351.0;
    let err = (report.macro_f1_official - expected).abs();
    if err > 1e-9 {
        return Fail(format!(
            "toy confusion macro-F1 {} vs worked value {expected} (err {err:.3e})",
            report.macro_f1_official
        ));
    }

    let everything: Vec<usize> = (0..NUM_LABELS).collect();
    let perfect = score(&everything, &everything);
    if perfect.macro_f1_official != 100.0 {
        return Fail(format!("all-correct macro-F1 {} != 100.0", perfect.macro_f1_official));
    }
    let all_other = score(&everything, &vec![other; NUM_LABELS]);
    if all_other.macro_f1_official != 0.0 {
        return Fail(format!("all-Other macro-F1 {} != 0.0", all_other.macro_f1_official));
    }
    Pass(format!("toy matrix scores {:.9} (worked value to 1e-9); edges exact", report.macro_f1_official))
}

fn determinism() -> Outcome {
    let (data, _) = synth::generate_split(7, 200, 1);
    let cfg = HyperConfig {
        word_dim: 8,
        pos_dim: 4,
        gr_dim: 4,
        hypernym_dim: 4,
        hidden_dim: 8,
        epochs: 3,
        patience: 0,
        seed: 11,
        ..HyperConfig::default()
    };
    let dir = TempDir::new().expect("tempdir");
    let run = |tag: &str| {
        let ckpt = dir.path().join(format!("{tag}.ckpt"));
        let log = dir.path().join(format!("{tag}.jsonl"));
        let io =
            TrainIo { checkpoint: Some(&ckpt), epoch_log: Some(&log), pretrained_words: None };
        train(&data, &cfg, &io).map(|_| {
            (std::fs::read(&ckpt).expect("checkpoint"), std::fs::read(&log).expect("log"))
        })
    };
    let (ckpt_a, log_a) = match run("a") {
        Ok(x) => x,
        Err(e) => return Fail(format!("first run failed: {e}")),
    };
    let (ckpt_b, log_b) = match run("b") {
        Ok(x) => x,
        Err(e) => return Fail(format!("second run failed: {e}")),
    };
    if log_a != log_b {
        return Fail("epoch logs differ between identical runs".to_string());
    }
    if ckpt_a != ckpt_b {
        return Fail("checkpoints differ between identical runs".to_string());
    }
    Pass(format!(
        "re-run is byte-identical: {}-byte checkpoint, {}-byte log (single-threaded by construction)",
        ckpt_a.len(),
        log_a.len()
    ))
}

/// Needs a real preprocessed corpus, so it only runs when
/// SDPLSTM_SEMEVAL_DIR points at train.sdpc/test.sdpc (optionally with
/// SDPLSTM_SEMEVAL_VECTORS for pretrained word embeddings).
fn semeval_bracket() -> Outcome {
    let dir = match std::env::var("SDPLSTM_SEMEVAL_DIR") {
        Ok(d) => std::path::PathBuf::from(d),
        Err(_) => return Skip("set SDPLSTM_SEMEVAL_DIR to run against a real corpus".to_string()),
    };
    let read = |name: &str| -> Result<Vec<DepSentence>, String> {
        let path = dir.join(name);
        let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        parse_sdpc(&text).map_err(|e| e.to_string())
    };
    let train_data = match read("train.sdpc") {
        Ok(d) => d,
        Err(e) => return Fail(e),
    };
    let test_data = match read("test.sdpc") {
        Ok(d) => d,
        Err(e) => return Fail(e),
    };
    let vectors = std::env::var("SDPLSTM_SEMEVAL_VECTORS").ok().map(std::path::PathBuf::from);

    let base = HyperConfig::default();
    let io = TrainIo {
        checkpoint: None,
        epoch_log: None,
        pretrained_words: vectors.as_deref(),
    };
    let full_run = match train(&train_data, &base, &io) {
        Ok(o) => o,
        Err(e) => return Fail(format!("training failed: {e}")),
    };
    let samples = samples_of(&test_data, &full_run.vocabs);
    let gold: Vec<usize> = samples.iter().map(|s| s.class).collect();
    let pred: Vec<usize> = samples
        .iter()
        .map(|s| forward(&full_run.params, &base, s, Mode::Infer).0.class)
        .collect();
    let all_f1 = score(&gold, &pred).macro_f1_official;
    if !(80.0..=85.0).contains(&all_f1) {
        return Fail(format!("all-channel macro-F1 {all_f1:.1} outside [80, 85]"));
    }

    let ladder = channel_ladder(&base);
    let outcomes = ablation_run(&train_data, &test_data, &ladder);
    let mut f1s = std::collections::HashMap::new();
    for o in &outcomes {
        match &o.result {
            Ok(report) => {
                f1s.insert(o.name.clone(), report.macro_f1_official);
            }
            Err(e) => return Fail(format!("ladder cell {} failed: {e}", o.name)),
        }
    }
    let word = f1s["word"];
    let all = f1s["all"];
    for mid in ["word+pos", "word+gr", "word+wordnet"] {
        if !(word < f1s[mid] && f1s[mid] < all) {
            return Fail(format!(
                "ladder out of order: word {word:.1}, {mid} {:.1}, all {all:.1}",
                f1s[mid]
            ));
        }
    }
    Pass(format!("all-channel macro-F1 {all_f1:.1} in [80, 85]; channel ladder ordered"))
}

#[test]
fn acceptance() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("shortest-path oracle", shortest_path_oracle),
        ("gradient audit", gradient_audit),
        ("zero network", zero_network),
        ("objective sanity", objective_sanity),
        ("synthetic learnability", synthetic_learnability),
        ("dropout statistics", dropout_statistics),
        ("scoring oracle", scoring_oracle),
        ("determinism", determinism),
        ("held-out corpus bracket", semeval_bracket),
    ];

    let mut failures = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        match run() {
            Pass(detail) => println!("criterion {n} ({name}): PASS  {detail}"),
            Skip(detail) => println!("criterion {n} ({name}): SKIP  {detail}"),
            Fail(detail) => {
                println!("criterion {n} ({name}): FAIL  {detail}");
                failures.push(format!("criterion {n} ({name}): {detail}"));
            }
        }
    }
    assert!(failures.is_empty(), "{} criteria failed:\n{}", failures.len(), failures.join("\n"));
}
