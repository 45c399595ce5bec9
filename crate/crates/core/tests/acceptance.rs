//! End-to-end acceptance suite: one `[PASS]`/`[FAIL]` line per criterion.
//! Runs without the libtest harness; exits nonzero if any criterion fails.

mod common;

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use afd::analysis::{encode_pgm, feature_similarity};
use afd::checkpoint::Checkpoint;
use afd::data::{load_idx, Method, RunConfig, Split};
use afd::losses;
use afd::nn::{InputShape, Module, Network};
use afd::optim::lr_at;
use afd::trainer::{build_plan, restore, run_experiment, Edge, Trainer};
use afd::Tensor;
use common::fixtures::{desk_config, malformed_fixtures, small_config, ten_image_fixture, write_pair};
use common::{gradsuite, FD_TOL};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn bits<M: Module<f32>>(m: &M) -> Vec<u32> {
    m.params()
        .into_iter()
        .flat_map(|(_, p)| p.value().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        .collect()
}

fn head_bits(n: &Network) -> Vec<u32> {
    n.head_params()
        .into_iter()
        .flat_map(|(_, p)| p.value().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        .collect()
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let results = gradsuite::all();
    let secs = start.elapsed().as_secs_f64();
    let worst = results.iter().map(|r| r.worst).fold(0.0, f64::max);
    for r in &results {
        ensure!(r.instances >= 10, "{}: only {} instances", r.name, r.instances);
        ensure!(r.worst <= FD_TOL, "{}: relative error {:.2e}", r.name, r.worst);
    }
    ensure!(secs < 60.0, "took {secs:.1}s");
    Ok(format!("{} ops/losses, worst rel. err {worst:.2e}, {secs:.1}s", results.len()))
}

fn loss_identities() -> Outcome {
    let t = |shape: &[usize], v: Vec<f64>| Tensor::new(shape.to_vec(), v).unwrap();
    let classes = 7;
    let ce = losses::cross_entropy(&[0, 3, 6], &t(&[3, classes], vec![0.4; 3 * classes])).unwrap().item().unwrap();
    ensure!((ce - (classes as f64).ln()).abs() <= 1e-6, "CE uniform {ce}");
    let z = t(&[2, 4], vec![1.0, -2.0, 0.5, 3.0, 0.0, 0.1, -0.7, 2.2]);
    let kl = losses::kl_mimicry(&z, &z, 3.0).unwrap().item().unwrap();
    ensure!(kl.abs() <= 1e-8, "KL identical {kl}");
    let d = |p: f64, o: f64| losses::lsgan_d_loss(&t(&[1, 1], vec![p]), &t(&[1, 1], vec![o])).unwrap().item().unwrap();
    ensure!(d(1.0, 0.0).abs() <= 1e-8, "D(1,0) = {}", d(1.0, 0.0));
    ensure!((d(0.5, 0.5) - 0.5).abs() <= 1e-8, "D(0.5,0.5) = {}", d(0.5, 0.5));
    let g = losses::lsgan_g_loss(&t(&[1, 1], vec![1.0])).unwrap().item().unwrap();
    ensure!(g.abs() <= 1e-8, "G(1) = {g}");
    Ok(format!("CE={ce:.9} (ln {classes}), KL={kl:.1e}, D(1,0)=0, D(.5,.5)=0.5, G(1)=0"))
}

fn topology() -> Outcome {
    let input = InputShape {
        channels: 1,
        height: 16,
        width: 16,
    };
    let mut cfg = small_config(Method::Afd, Path::new("unused"));
    cfg.nets = 3;
    let p3 = build_plan(&cfg, input, 3).map_err(|e| e.to_string())?;
    let want = [Edge { src: 0, dst: 1 }, Edge { src: 1, dst: 2 }, Edge { src: 2, dst: 0 }];
    ensure!(p3.edges == want, "K=3 edges {:?}", p3.edges);
    ensure!(p3.discriminators.len() == 3, "K=3: {} discriminators", p3.discriminators.len());
    cfg.nets = 2;
    let p2 = build_plan(&cfg, input, 3).map_err(|e| e.to_string())?;
    ensure!(p2.discriminators.len() == 2, "K=2: {} discriminators", p2.discriminators.len());
    let edges: Vec<String> = p3.edges.iter().map(Edge::to_string).collect();
    Ok(format!("K=3 {{{}}} with 3 D; K=2 with 2 D", edges.join(", ")))
}

fn schedules() -> Outcome {
    let logit = [(0, 0.1), (149, 0.1), (150, 0.01), (224, 0.01), (225, 0.001), (299, 0.001)];
    for (epoch, want) in logit {
        let got = lr_at(epoch, 0.1, &[150, 225], 0.1);
        ensure!((got - want).abs() <= 1e-12 * want, "logit lr at {epoch}: {got}");
    }
    let adv = [(0, 2e-5), (74, 2e-5), (75, 2e-6), (149, 2e-6), (150, 2e-7)];
    for (epoch, want) in adv {
        let got = lr_at(epoch, 2e-5, &[75, 150], 0.1);
        ensure!((got - want).abs() <= 1e-12 * want, "adversarial lr at {epoch}: {got}");
    }
    Ok("0.1→0.01@150→0.001@225; 2e-5→2e-6@75→2e-7@150".into())
}

fn phase_isolation() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(Method::Afd, dir.path());
    let (train, _, _) = cfg.load_datasets().map_err(|e| e.to_string())?;
    let (x, y) = train.gather(&(0..16).collect::<Vec<_>>()).unwrap();
    let mut full = Trainer::new(&cfg, train.input_shape(), train.num_classes()).map_err(|e| e.to_string())?;
    let mut phase_a = full.clone();
    phase_a.plan.adversarial = false;
    let d0: Vec<_> = full.plan.discriminators.iter().map(bits).collect();
    full.step(&x, &y, 0).map_err(|e| e.to_string())?;
    phase_a.step(&x, &y, 0).map_err(|e| e.to_string())?;
    for k in 0..2 {
        ensure!(head_bits(&full.plan.nets[k]) == head_bits(&phase_a.plan.nets[k]), "net {k} head moved in phase B");
        ensure!(bits(&phase_a.plan.discriminators[k]) == d0[k], "D{k} moved in phase A");
        ensure!(bits(&full.plan.discriminators[k]) != d0[k], "D{k} untouched by phase B");
    }
    let afd_calls: Vec<u64> = full.plan.nets.iter().map(Network::extractor_calls).collect();
    ensure!(afd_calls == [1, 1], "AFD forward counts {afd_calls:?}");

    let dml_cfg = small_config(Method::Dml, dir.path());
    let mut dml = Trainer::new(&dml_cfg, train.input_shape(), train.num_classes()).map_err(|e| e.to_string())?;
    dml.step(&x, &y, 0).map_err(|e| e.to_string())?;
    let dml_calls: u64 = dml.plan.nets.iter().map(Network::extractor_calls).sum();
    ensure!(dml_calls == 3, "DML forward count {dml_calls}");
    Ok(format!("heads bitwise equal across phase B, D only moved by phase B; forwards AFD={} DML={dml_calls}", afd_calls.iter().sum::<u64>()))
}

struct DeskRun {
    avg: f64,
    ensemble: f64,
    cosine: f64,
}

fn desk_run(method: Method, seed: u64, root: &Path) -> Result<DeskRun, String> {
    let cfg = desk_config(method, seed, &root.join(format!("{method}-{seed}")));
    let summary = run_experiment(&cfg, None).map_err(|e| e.to_string())?;
    let (mut trainer, test) = restore(&cfg, summary.checkpoints.last().unwrap()).map_err(|e| e.to_string())?;
    let (a, b) = trainer.plan.nets.split_at_mut(1);
    let sim = feature_similarity(&mut a[0], &mut b[0], &test).map_err(|e| e.to_string())?;
    Ok(DeskRun {
        avg: summary.final_eval.mean_top1(),
        ensemble: summary.final_eval.ensemble_top1,
        cosine: sim.cosine,
    })
}

const SEEDS: [u64; 3] = [0, 1, 2];

struct Desk {
    vanilla: Vec<DeskRun>,
    afd: Vec<DeskRun>,
    l1kd: Vec<DeskRun>,
    secs: f64,
}

fn desk() -> Result<Desk, String> {
    let root = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let runs = |m: Method| SEEDS.iter().map(|&s| desk_run(m, s, root.path())).collect::<Result<Vec<_>, _>>();
    Ok(Desk {
        vanilla: runs(Method::Vanilla)?,
        afd: runs(Method::Afd)?,
        l1kd: runs(Method::L1Kd)?,
        secs: start.elapsed().as_secs_f64(),
    })
}

fn mean(runs: &[DeskRun], f: impl Fn(&DeskRun) -> f64) -> f64 {
    runs.iter().map(f).sum::<f64>() / runs.len() as f64
}

fn series(runs: &[DeskRun], digits: usize, f: impl Fn(&DeskRun) -> f64) -> String {
    runs.iter().map(|r| format!("{:.digits$}", f(r))).collect::<Vec<_>>().join("/")
}

fn distillation_benefit(d: &Result<Desk, String>) -> Outcome {
    let d = d.as_ref().map_err(Clone::clone)?;
    let vanilla = mean(&d.vanilla, |r| r.avg);
    let afd = mean(&d.afd, |r| r.avg);
    let ens = mean(&d.afd, |r| r.ensemble);
    let detail = format!(
        "vanilla {vanilla:.2} [{}], AFD avg {afd:.2} [{}], AFD ensemble {ens:.2} [{}], {:.0}s for 9 runs",
        series(&d.vanilla, 2, |r| r.avg),
        series(&d.afd, 2, |r| r.avg),
        series(&d.afd, 2, |r| r.ensemble),
        d.secs
    );
    ensure!(afd >= vanilla, "AFD below vanilla: {detail}");
    ensure!(ens >= afd, "ensemble below members: {detail}");
    ensure!(d.secs < 15.0 * 60.0, "too slow: {detail}");
    Ok(detail)
}

fn similarity_collapse(d: &Result<Desk, String>) -> Outcome {
    let d = d.as_ref().map_err(Clone::clone)?;
    let l1kd = mean(&d.l1kd, |r| r.cosine);
    let afd = mean(&d.afd, |r| r.cosine);
    let detail = format!(
        "cosine L1+KD {l1kd:.4} [{}], AFD {afd:.4} [{}], vanilla {:.4}",
        series(&d.l1kd, 4, |r| r.cosine),
        series(&d.afd, 4, |r| r.cosine),
        mean(&d.vanilla, |r| r.cosine)
    );
    ensure!(l1kd > 0.9, "L1+KD pair not aligned: {detail}");
    ensure!(afd < l1kd - 0.1, "gap below 0.1: {detail}");
    Ok(detail)
}

fn determinism_and_resume() -> Outcome {
    let dirs: Vec<_> = (0..4).map(|_| tempfile::tempdir().unwrap()).collect();
    let cfg_in = |dir: &Path, epochs: usize| -> RunConfig {
        let mut c = small_config(Method::Afd, dir);
        c.epochs = epochs;
        c.milestones_logit = vec![2];
        c.milestones_adv = vec![3];
        c
    };
    let run = |c: &RunConfig, resume: Option<&Path>| run_experiment(c, resume).map_err(|e| e.to_string());
    let csv = |dir: &Path| fs::read_to_string(dir.join("metrics.csv")).unwrap();

    run(&cfg_in(dirs[0].path(), 4), None)?;
    run(&cfg_in(dirs[1].path(), 4), None)?;
    ensure!(csv(dirs[0].path()) == csv(dirs[1].path()), "same-seed metrics differ");

    let first = run(&cfg_in(dirs[2].path(), 2), None)?;
    run(&cfg_in(dirs[2].path(), 4), Some(first.checkpoints.last().unwrap()))?;
    let (a, b) = (csv(dirs[0].path()), csv(dirs[2].path()));
    ensure!(a.lines().count() == b.lines().count(), "resumed CSV has a different length");
    let mut worst = 0.0f64;
    for (la, lb) in a.lines().skip(1).zip(b.lines().skip(1)) {
        let (fa, fb): (Vec<&str>, Vec<&str>) = (la.split(',').collect(), lb.split(',').collect());
        ensure!(fa[..3] == fb[..3], "row keys differ: {la} / {lb}");
        for (x, y) in fa[3..].iter().zip(&fb[3..]) {
            worst = worst.max((x.parse::<f64>().unwrap() - y.parse::<f64>().unwrap()).abs());
        }
    }
    ensure!(worst <= 1e-6, "resume drift {worst:.2e}");
    Ok(format!("{} identical CSV bytes; resume at epoch 2 of 4, max metric drift {worst:.1e}", a.len()))
}

fn formats() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = ten_image_fixture();
    let (pi, pl) = write_pair(dir.path(), "ok", &img, &lab);
    ensure!(load_idx(&pi, &pl, Split::Train).is_ok(), "valid fixture rejected");
    for (name, img, lab, kind) in malformed_fixtures() {
        let (pi, pl) = write_pair(dir.path(), &name.replace(' ', "_"), &img, &lab);
        match load_idx(&pi, &pl, Split::Train) {
            Err(e) if e.format_kind() == Some(kind) => {}
            other => return Err(format!("{name}: got {other:?}")),
        }
    }

    let cfg = small_config(Method::Afd, dir.path());
    let (train, _, st) = cfg.load_datasets().map_err(|e| e.to_string())?;
    let mut a = Trainer::new(&cfg, train.input_shape(), train.num_classes()).map_err(|e| e.to_string())?;
    let (x, y) = train.gather(&(0..16).collect::<Vec<_>>()).unwrap();
    a.step(&x, &y, 0).map_err(|e| e.to_string())?;
    let path = dir.path().join("ck.afdk");
    a.to_checkpoint(1, &st).save(&path).map_err(|e| e.to_string())?;
    let mut other = cfg.clone();
    other.seed = 1234;
    let mut b = Trainer::new(&other, train.input_shape(), train.num_classes()).map_err(|e| e.to_string())?;
    b.load_checkpoint(&Checkpoint::load(&path).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let mut tensors = 0;
    for k in 0..2 {
        ensure!(bits(&a.plan.nets[k]) == bits(&b.plan.nets[k]), "net {k} differs after restore");
        ensure!(
            bits(&a.plan.discriminators[k]) == bits(&b.plan.discriminators[k]),
            "D{k} differs after restore"
        );
        tensors += a.plan.nets[k].params().len() + a.plan.discriminators[k].params().len();
    }

    let pgm = encode_pgm(&Tensor::new(vec![2, 2], vec![0.0f32, 1.0, 0.5, 0.25]).unwrap()).map_err(|e| e.to_string())?;
    let want: &[u8] = b"P5\n2 2\n255\n\x00\xff\x80\x40";
    ensure!(pgm == want, "PGM bytes {pgm:?}");
    Ok(format!("3 malformed IDX fixtures rejected by class; {tensors} tensors restored bit-exactly; PGM bytes match"))
}

fn main() -> ExitCode {
    // Failures are reported on the criterion line, not as panic traces.
    panic::set_hook(Box::new(|_| {}));
    let guard = |f: &dyn Fn() -> Outcome| -> Outcome {
        panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        })
    };

    let desk = panic::catch_unwind(desk).unwrap_or_else(|_| Err("desk runs panicked".into()));

    let criteria: Vec<(&str, Outcome)> = vec![
        ("1 gradient suite", guard(&gradient_suite)),
        ("2 loss identities", guard(&loss_identities)),
        ("3 topology", guard(&topology)),
        ("4 schedules", guard(&schedules)),
        ("5 phase isolation and forward counts", guard(&phase_isolation)),
        ("6 distillation benefit", guard(&|| distillation_benefit(&desk))),
        ("7 similarity collapse", guard(&|| similarity_collapse(&desk))),
        ("8 determinism and resume", guard(&determinism_and_resume)),
        ("9 formats", guard(&formats)),
    ];
    let mut failed = 0;
    for (name, outcome) in &criteria {
        match outcome {
            Ok(detail) => println!("[PASS] {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
