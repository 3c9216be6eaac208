//! Acceptance suite: one PASS/FAIL line per criterion, then a single
//! assertion over all of them.
//!
//! Lines go straight to stderr so they show up without `--nocapture`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use afsd::annotation::Instance;
use afsd::config::{Config, NmsKind, QualityMode};
use afsd::eval::{average_precision, chance_map, mean_ap, ChanceModel, GroundTruth};
use afsd::losses::assign;
use afsd::model::CoarseBounds;
use afsd::pipeline::detections::Detection;
use afsd::pipeline::{infer_videos, rescore, synth_dataset, train_model, AnnotationDoc, NmsParams, Stream};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensorcore::{Tape, Tensor};

const SEEDS: u64 = 5;

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Verdict + 'a>);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn emit(name: &str, v: &Verdict) {
    let line = format!("{} {name}: {}\n", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
}

fn desk_profile() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../profiles/desk.cfg")
}

/// Runs the binary with the desk profile, failing loudly on a non-zero exit.
fn afsd(extra: &[&str]) -> String {
    let profile = desk_profile();
    let mut args: Vec<&str> = vec!["--config", profile.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = Command::new(env!("CARGO_BIN_EXE_afsd")).args(&args).output().unwrap();
    assert!(
        o.status.success(),
        "afsd {args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn gradients(tmp: &Path) -> Verdict {
    let out = tmp.join("gradcheck");
    let t0 = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_afsd"))
        .args(["--out-dir", out.to_str().unwrap(), "gradcheck"])
        .output()
        .unwrap()
        .status;
    let secs = t0.elapsed().as_secs_f64();
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("gradcheck.json")).unwrap()).unwrap();
    let worst = report["max_rel_error"].as_f64().unwrap();
    let checks = report["checks"].as_array().unwrap().len();
    verdict(
        status.success() && worst < 1e-4 && secs < 60.0 && checks >= 16,
        format!("{checks} checks, max relative error {worst:.2e}, {secs:.1}s"),
    )
}

fn pooling() -> Verdict {
    let t0 = Instant::now();
    match tensorcore::suite::max_pool_oracle() {
        Ok(n) => verdict(true, format!("{n} regions, {:.2}s", t0.elapsed().as_secs_f64())),
        Err(e) => verdict(false, e),
    }
}

fn overlap(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    inter / ((a.1 - a.0) + (b.1 - b.0) - inter)
}

fn assignment() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut refined = 0;
    for case in 0..1000 {
        let s = rng.random_range(0.0..200.0);
        let g = Instance::new(s, s + rng.random_range(1.0..80.0), 1 + case % 3).unwrap();
        let ps = g.start + rng.random_range(-20.0..20.0);
        let p = CoarseBounds {
            start: ps,
            end: (g.end + rng.random_range(-20.0..20.0)).max(ps + 1.0),
        };
        let t = rng.random_range(g.start - 10.0..g.end + 10.0);
        let a = assign(&[t], &[p], &[g], 0.5);
        let inside = g.start <= t && t <= g.end;
        let expect_refined = inside && overlap(p.as_pair(), g.as_pair()) > 0.5;
        if a.coarse[0].is_some() != inside || a.refined[0].is_some() != expect_refined {
            return verdict(false, format!("case {case}: {p:?} {g:?} anchor {t}"));
        }
        if let Some(r) = a.refined[0] {
            let (s, e) = p.refine(r.offsets.0, r.offsets.1);
            worst = worst.max((s - g.start).abs() / g.start.abs().max(1.0));
            worst = worst.max((e - g.end).abs() / g.end.abs().max(1.0));
            refined += 1;
        }
    }
    verdict(
        worst < 1e-9,
        format!("1000 pairs, {refined} refined, max relative error {worst:.1e}"),
    )
}

fn loss_fixtures() -> Verdict {
    let mut tape = Tape::new();
    let z = tape.leaf(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
    let focal = tape.softmax_focal(z, &[1], 0.25, 2.0, 1.0).unwrap();
    let focal = tape.value(focal).item();
    let d = tape.leaf(Tensor::matrix(1, 2, vec![5.0, 5.0]).unwrap());
    let tl = tape.tiou_loss(d, &[5.0], &[Some((5.0, 15.0))], 1.0).unwrap();
    let tl = tape.value(tl).item();
    let mut scalar = |x: f64| tape.leaf(Tensor::vector(vec![x]).unwrap());
    let (a, p0, n0) = (scalar(0.0), scalar(0.0), scalar(2f64.sqrt()));
    let (p1, n1) = (scalar(1.0), scalar(0.5f64.sqrt()));
    let t0 = tape.triplet(a, p0, n0, 1.0).unwrap();
    let t1 = tape.triplet(a, p1, n1, 1.0).unwrap();
    let (t0, t1) = (tape.value(t0).item(), tape.value(t1).item());
    let pass =
        (focal - 0.0433).abs() <= 1e-4 && (tl - 2.0 / 3.0).abs() <= 1e-9 && t0 == 0.0 && (t1 - 1.5).abs() < 1e-15;
    verdict(
        pass,
        format!("focal {focal:.6}, tIoU loss {tl:.12}, triplet {t0} and {t1}"),
    )
}

fn det(video: &str, start: f64, end: f64, label: usize, score: f64) -> Detection {
    Detection {
        video: video.into(),
        start,
        end,
        label,
        score,
    }
}

fn soft_nms() -> Verdict {
    let p = NmsParams {
        kind: NmsKind::Linear,
        threshold: 0.5,
        sigma: 0.5,
        floor: 1e-4,
    };
    let pair = rescore(&[det("v", 0.0, 10.0, 1, 0.8), det("v", 0.0, 10.0, 1, 0.9)], &p);
    let fixture = pair.iter().map(|d| d.score).collect::<Vec<_>>() == [0.9, 0.0];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut ok = true;
    for _ in 0..200 {
        let n = rng.random_range(1..30);
        let mut dets: Vec<Detection> = (0..n)
            .map(|_| {
                let s = rng.random_range(0.0..100.0);
                det("v", s, s + rng.random_range(0.5..30.0), 1, rng.random::<f64>())
            })
            .collect();
        let a = rescore(&dets, &p);
        dets.shuffle(&mut rng);
        ok &= a == rescore(&dets, &p);
        ok &= a.windows(2).all(|w| w[0].score >= w[1].score);
        ok &= a.iter().all(|d| {
            dets.iter()
                .any(|o| o.start == d.start && o.end == d.end && d.score <= o.score)
        });
    }
    verdict(
        fixture && ok,
        format!(
            "duplicate pair -> {:?}, 200 random sets order-invariant and monotone: {ok}",
            pair.iter().map(|d| d.score).collect::<Vec<_>>()
        ),
    )
}

fn map_evaluator() -> Verdict {
    let g: GroundTruth = BTreeMap::from([(
        "v".to_string(),
        vec![
            Instance::new(0.0, 10.0, 1).unwrap(),
            Instance::new(20.0, 30.0, 1).unwrap(),
        ],
    )]);
    let full = average_precision(&[det("v", 0.0, 10.0, 1, 0.9), det("v", 20.0, 30.0, 1, 0.8)], &g, 1, 0.5);
    let half = average_precision(&[det("v", 0.0, 10.0, 1, 0.9)], &g, 1, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let thresholds: Vec<f64> = (1..10).map(|k| k as f64 / 10.0).collect();
    let labels = ["a".to_string(), "b".to_string()];
    let mut monotone = true;
    for _ in 0..100 {
        let mut gts: GroundTruth = BTreeMap::new();
        for _ in 0..rng.random_range(1..12) {
            let s = rng.random_range(0.0..100.0);
            let v = format!("v{}", rng.random_range(0..3));
            gts.entry(v)
                .or_default()
                .push(Instance::new(s, s + rng.random_range(1.0..30.0), rng.random_range(1..3)).unwrap());
        }
        let dets: Vec<Detection> = (0..rng.random_range(0..30))
            .map(|_| {
                let s = rng.random_range(0.0..100.0);
                let v = format!("v{}", rng.random_range(0..4));
                det(
                    &v,
                    s,
                    s + rng.random_range(1.0..30.0),
                    rng.random_range(1..3),
                    rng.random(),
                )
            })
            .collect();
        let r = mean_ap(&dets, &gts, &labels, &thresholds);
        monotone &= r.classes.iter().all(|c| c.ap.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }
    verdict(
        full == 1.0 && half == 0.5 && monotone,
        format!("AP fixtures {full} and {half}, monotone in threshold on 100 random instances: {monotone}"),
    )
}

fn read_map(report: &Path) -> f64 {
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    let i = r["thresholds"]
        .as_array()
        .unwrap()
        .iter()
        .position(|t| (t.as_f64().unwrap() - 0.5).abs() < 1e-9)
        .unwrap();
    r["map"][i].as_f64().unwrap()
}

/// Full command-line run: synth, train, infer and eval on both subsets.
fn pipeline(root: &Path, extra: &[&str]) -> (f64, f64) {
    let with = |v: &[&str]| -> Vec<String> { extra.iter().chain(v).map(|s| s.to_string()).collect() };
    let run = |v: &[&str]| {
        let args = with(v);
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        afsd(&refs)
    };
    let p = |s: &str| root.join(s).to_str().unwrap().to_string();
    let (data, train, inf_test, inf_train, ev_test, ev_train) = (
        p("data"),
        p("train"),
        p("infer_test"),
        p("infer_train"),
        p("eval_test"),
        p("eval_train"),
    );
    run(&["--out-dir", &data, "synth"]);
    run(&["--out-dir", &train, "train", "--data", &data]);
    run(&["--out-dir", &inf_test, "infer", "--data", &data, "--checkpoint", &train]);
    run(&[
        "--out-dir",
        &inf_train,
        "infer",
        "--data",
        &data,
        "--checkpoint",
        &train,
        "--subset",
        "train",
    ]);
    let dt = format!("{inf_test}/detections.jsonl");
    let dtr = format!("{inf_train}/detections.jsonl");
    run(&["--out-dir", &ev_test, "eval", "--data", &data, "--detections", &dt]);
    run(&[
        "--out-dir",
        &ev_train,
        "eval",
        "--data",
        &data,
        "--detections",
        &dtr,
        "--subset",
        "train",
    ]);
    (
        read_map(&root.join("eval_train/report.json")),
        read_map(&root.join("eval_test/report.json")),
    )
}

fn chance_level(data: &Path) -> f64 {
    let doc = AnnotationDoc::load(&data.join("annotations.json")).unwrap();
    let train = doc.ground_truth(Some("train")).unwrap();
    let test = doc.ground_truth(Some("test")).unwrap();
    let widths = train.values().flatten().map(|i| i.width()).collect();
    let durations: BTreeMap<String, f64> = test
        .keys()
        .map(|v| (v.clone(), doc.videos[v].duration_frames))
        .collect();
    let cfg = Config::load(&desk_profile()).unwrap();
    let model = ChanceModel {
        widths,
        per_video: cfg.infer.max_per_video,
        trials: 20,
    };
    chance_map(&model, &test, &durations, &doc.labels, 0.5, 1)
}

fn end_to_end(tmp: &Path) -> Verdict {
    let t0 = Instant::now();
    let (train, test) = pipeline(&tmp.join("e2e"), &[]);
    let learn_secs = t0.elapsed().as_secs_f64();
    let (_, null) = pipeline(&tmp.join("null"), &["--set", "synth.snr=0"]);
    let chance = chance_level(&tmp.join("null/data"));
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        train >= 0.9 && test >= 0.6 && null <= 3.0 * chance && secs < 900.0,
        format!(
            "train mAP@0.5 {train:.3}, test {test:.3} ({learn_secs:.0}s); zero-SNR test {null:.3} vs chance {chance:.3}; {secs:.0}s total"
        ),
    )
}

/// Test mAP@0.5 of one training run on the harder ablation benchmark.
fn ablation_run(seed: u64, tweak: &dyn Fn(&mut Config)) -> f64 {
    let mut cfg = Config::load(&desk_profile()).unwrap();
    cfg.synth.snr = 0.5;
    cfg.synth.test_videos = 20;
    cfg.train.seed = seed;
    cfg.model.init_seed = seed;
    tweak(&mut cfg);
    let data = synth_dataset(seed, &cfg.synth).unwrap();
    let train = data.videos("train", Stream::Rgb).unwrap();
    let test = data.videos("test", Stream::Rgb).unwrap();
    let (model, _) = train_model(&cfg, &train, data.doc.num_classes(), |_| Ok(()), |_, _| Ok(())).unwrap();
    let dets = infer_videos(&[(&model, &test)], &cfg).unwrap();
    mean_ap(&dets, &data.ground_truth("test").unwrap(), &data.doc.labels, &[0.5]).map[0]
}

fn ablation() -> Verdict {
    let t0 = Instant::now();
    let mean = |tweak: &dyn Fn(&mut Config)| -> (f64, Vec<f64>) {
        let runs: Vec<f64> = (0..SEEDS).map(|s| ablation_run(s, tweak)).collect();
        (runs.iter().sum::<f64>() / runs.len() as f64, runs)
    };
    let (full, full_runs) = mean(&|_| {});
    let (no_quality, nq_runs) = mean(&|c| c.loss.quality = QualityMode::None);
    let (no_bcl, nb_runs) = mean(&|c| c.loss.bcl = false);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    verdict(
        full > no_quality && full > no_bcl,
        format!(
            "mean test mAP@0.5 over {SEEDS} seeds: full {full:.4} [{}], no quality {no_quality:.4} [{}], no BCL {no_bcl:.4} [{}]; {:.0}s",
            fmt(&full_runs),
            fmt(&nq_runs),
            fmt(&nb_runs),
            t0.elapsed().as_secs_f64()
        ),
    )
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

/// Reruns the first pipeline and compares every artifact byte for byte.
fn determinism(tmp: &Path) -> Verdict {
    pipeline(&tmp.join("e2e_again"), &[]);
    let (a, b) = (tmp.join("e2e"), tmp.join("e2e_again"));
    let (fa, fb) = (files(&a), files(&b));
    if fa != fb {
        return verdict(false, format!("artifact lists differ: {fa:?} vs {fb:?}"));
    }
    let differing: Vec<String> = fa
        .iter()
        .filter(|f| std::fs::read(a.join(f)).unwrap() != std::fs::read(b.join(f)).unwrap())
        .map(|f| f.display().to_string())
        .collect();
    verdict(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} artifacts identical across reruns", fa.len())
        } else {
            format!("differing: {differing:?}")
        },
    )
}

#[test]
fn acceptance() {
    let tmp = tempfile::tempdir().unwrap();
    let criteria: Vec<Criterion> = vec![
        ("gradient correctness", Box::new(|| gradients(tmp.path()))),
        ("boundary pooling oracle", Box::new(pooling)),
        ("assignment and offset round trip", Box::new(assignment)),
        ("loss fixtures", Box::new(loss_fixtures)),
        ("soft-nms properties", Box::new(soft_nms)),
        ("map evaluator", Box::new(map_evaluator)),
        ("end-to-end desk-scale learning", Box::new(|| end_to_end(tmp.path()))),
        ("ablation direction", Box::new(ablation)),
        ("determinism", Box::new(|| determinism(tmp.path()))),
    ];
    let _ = std::io::stderr().lock().write_all(b"\n");
    let mut failed = Vec::new();
    for (name, check) in &criteria {
        let v = check();
        emit(name, &v);
        if !v.pass {
            failed.push(*name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
