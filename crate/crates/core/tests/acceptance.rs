//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::event_sim::{layer_events, simulate};
use common::{random_hardware, random_matrix_layer, rel_err};
use imc_nas::driver::{report_best, run_search, RunConfig, Strategy, Trial, TrialLog, TrialStatus};
use imc_nas::eval::Source;
use imc_nas::fitness::{fitness_eval, CostMetric, FitnessSpec};
use imc_nas::imc::{estimate_layer, estimate_network, HardwareConfig};
use imc_nas::ir::{expand, HeadSpec};
use imc_nas::space::{ArchGenome, BlockSpec, BlockType, InputShape, SearchSpace};
use imc_nas::tpe::SuggestionPath;
use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn cifar() -> InputShape {
    InputShape::new(3, 32, 32)
}

fn within(limit: Duration, start: Instant) -> Result<Duration, String> {
    let took = start.elapsed();
    if took < limit {
        Ok(took)
    } else {
        Err(format!("took {took:.2?}, limit {limit:?}"))
    }
}

fn enumerate(space: &SearchSpace) -> u64 {
    fn walk(space: &SearchSpace, depth: usize) -> u64 {
        let here = u64::from(space.depths().contains(&depth));
        if depth == space.depth_max {
            return here;
        }
        let mut n = here;
        for _ in &space.allowed_types {
            for _ in &space.allowed_kernels {
                n += walk(space, depth + 1);
            }
        }
        n
    }
    walk(space, 0)
}

fn search_space_count() -> Outcome {
    let start = Instant::now();
    let count = SearchSpace::default().count_configurations();
    let took = within(Duration::from_secs(1), start)?;
    if count != BigUint::from(2_745_954_000u64) {
        return Err(format!("count = {count}"));
    }
    for hi in 1..=4 {
        for lo in 1..=hi {
            let space = SearchSpace {
                depth_min: lo,
                depth_max: hi,
                ..SearchSpace::default()
            };
            let brute = enumerate(&space);
            if BigUint::from(brute) != space.count_configurations() {
                return Err(format!("depths {lo}..={hi}: enumerated {brute}"));
            }
        }
    }
    Ok(format!("count = {count} in {took:.2?}; depth <= 4 sub-spaces match enumeration"))
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(528);
    let mut worst = 0.0f64;
    for case in 0..200 {
        let hw = if case % 4 == 0 { HardwareConfig::default() } else { random_hardware(&mut rng) };
        let layer = random_matrix_layer(&mut rng);
        let closed = estimate_layer(0, &layer, &hw).map_err(|e| e.to_string())?;
        let ev = layer_events(&layer, &hw);
        worst = worst
            .max(rel_err(closed.latency_ns, ev.latency_ns(&hw)))
            .max(rel_err(closed.energy_pj, ev.energy_pj(&hw)));
    }
    let space = SearchSpace::default();
    for case in 0..100 {
        let hw = if case % 2 == 0 { HardwareConfig::default() } else { random_hardware(&mut rng) };
        let g = space.sample_valid(cifar(), &mut rng).map_err(|e| e.to_string())?;
        let ir = expand(&g, cifar(), &HeadSpec::default()).map_err(|e| e.to_string())?;
        let closed = estimate_network(&ir, &hw).map_err(|e| e.to_string())?;
        let sim = simulate(&ir, &hw);
        worst = worst
            .max(rel_err(closed.latency_ns, sim.total.latency_ns(&hw)))
            .max(rel_err(closed.energy_pj, sim.total.energy_pj(&hw)));
    }
    let took = within(Duration::from_secs(60), start)?;
    if worst < 1e-9 {
        Ok(format!("200 layers + 100 genomes, worst relative error {worst:.1e}, {took:.2?}"))
    } else {
        Err(format!("worst relative error {worst:e}"))
    }
}

fn costs(g: &ArchGenome) -> Result<(f64, f64), String> {
    let ir = expand(g, cifar(), &HeadSpec::default()).map_err(|e| e.to_string())?;
    let r = estimate_network(&ir, &HardwareConfig::default()).map_err(|e| e.to_string())?;
    Ok((r.latency_ms, r.energy_mj))
}

fn imc_trends() -> Outcome {
    let space = SearchSpace::default();
    let mut rng = ChaCha8Rng::seed_from_u64(529);

    for _ in 0..100 {
        let g = space.sample_valid(cifar(), &mut rng).map_err(|e| e.to_string())?;
        let i = rng.gen_range(0..g.depth());
        let mut mvgg = g.clone();
        mvgg.blocks[i].block_type = BlockType::Mvgg;
        let mut res = mvgg.clone();
        res.blocks[i].block_type = BlockType::Res;
        let (e0, e1) = (costs(&mvgg)?.1, costs(&res)?.1);
        if e1 <= e0 {
            return Err(format!("RES premium: {mvgg} {e0} mJ vs {res} {e1} mJ"));
        }
    }

    let mut pairs = 0;
    while pairs < 100 {
        let g = space.sample_valid(cifar(), &mut rng).map_err(|e| e.to_string())?;
        let bigger = if pairs % 2 == 0 {
            let i = rng.gen_range(0..g.depth());
            let Some(&k) = space.allowed_kernels.iter().filter(|&&k| k > g.blocks[i].kernels).min()
            else {
                continue;
            };
            let mut up = g.clone();
            up.blocks[i].kernels = k;
            up
        } else {
            if g.depth() == space.depth_max {
                continue;
            }
            let last = g.blocks.last().map(|b| b.kernels).unwrap_or(16);
            let ks: Vec<u32> = space.allowed_kernels.iter().copied().filter(|&k| k >= last).collect();
            let t = if rng.gen_bool(0.5) { BlockType::Mvgg } else { BlockType::Res };
            let mut longer = g.clone();
            longer.blocks.push(BlockSpec::new(t, ks[rng.gen_range(0..ks.len())]));
            longer
        };
        let (l0, e0) = costs(&g)?;
        let (l1, e1) = costs(&bigger)?;
        if l1 < l0 || e1 < e0 {
            return Err(format!("monotonicity: {g} ({l0}, {e0}) vs {bigger} ({l1}, {e1})"));
        }
        pairs += 1;
    }

    let table2: ArchGenome = "RES/128,MVGG/32,VGG/256,RES/32,VGG/128,RES/256".parse().unwrap();
    let (ms, mj) = costs(&table2)?;
    if !(0.1..=1000.0).contains(&ms) || !(0.01..=100.0).contains(&mj) {
        return Err(format!("Table II CIFAR genome at {ms} ms, {mj} mJ is outside the band"));
    }
    Ok(format!(
        "RES premium 100/100, monotone 100/100, Table II CIFAR genome {ms:.3} ms / {mj:.3} mJ"
    ))
}

fn run(cfg: &RunConfig) -> Result<TrialLog, String> {
    run_search(cfg).map_err(|e| e.to_string())
}

fn base(dir: &Path, name: &str, seed: u64, trials: usize, ff: CostMetric) -> RunConfig {
    RunConfig {
        seed,
        trials,
        fitness: FitnessSpec::new(ff, 1.0),
        out_dir: dir.join(name),
        deterministic_clock: true,
        ..RunConfig::default()
    }
}

fn best(log: &TrialLog) -> Result<&Trial, String> {
    report_best(log, 1).map(|rows| rows[0]).map_err(|e| e.to_string())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn tpe_beats_random(dir: &Path) -> Outcome {
    let start = Instant::now();
    let (mut wins, mut tpe_best, mut rnd_best) = (0, Vec::new(), Vec::new());
    for seed in 0..20 {
        let tpe = base(dir, &format!("tpe-{seed}"), seed, 60, CostMetric::Latency);
        let rnd = RunConfig {
            strategy: Strategy::Random,
            out_dir: dir.join(format!("random-{seed}")),
            ..tpe.clone()
        };
        let a = best(&run(&tpe)?)?.fitness;
        let b = best(&run(&rnd)?)?.fitness;
        wins += usize::from(a >= b);
        tpe_best.push(a);
        rnd_best.push(b);
    }
    let took = within(Duration::from_secs(120), start)?;
    let (mt, mr) = (median(tpe_best), median(rnd_best));
    let detail = format!("TPE >= random in {wins}/20, median best {mt:.4} vs {mr:.4}, {took:.2?}");
    if wins >= 14 && mt > mr {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn architecture_trends(dir: &Path) -> Outcome {
    let mut depth = [0.0; 3];
    let mut res_fraction = [0.0; 3];
    let metrics = [CostMetric::None, CostMetric::Latency, CostMetric::Energy];
    for (m, &ff) in metrics.iter().enumerate() {
        for seed in 0..10 {
            let cfg = base(dir, &format!("trend-{ff}-{seed}"), 100 + seed, 100, ff);
            let log = run(&cfg)?;
            let top = best(&log)?;
            depth[m] += top.depth() as f64 / 10.0;
            res_fraction[m] += top.genome.count_type(BlockType::Res) as f64 / top.depth() as f64 / 10.0;
        }
    }
    let detail = format!(
        "mean best depth acc {:.1} / acc_lat {:.1}; mean RES fraction acc {:.3} / acc_en {:.3}",
        depth[0], depth[1], res_fraction[0], res_fraction[2]
    );
    if depth[1] <= depth[0] - 1.0 && res_fraction[2] <= res_fraction[0] {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn determinism_and_resume(dir: &Path) -> Outcome {
    let a = base(dir, "det-a", 42, 100, CostMetric::Latency);
    let b = base(dir, "det-b", 42, 100, CostMetric::Latency);
    run(&a)?;
    run(&b)?;
    let read = |cfg: &RunConfig| fs::read(cfg.log_path()).map_err(|e| e.to_string());
    let reference = read(&a)?;
    if read(&b)? != reference {
        return Err("two runs with the same config and seed differ".into());
    }
    for cut in 0..=100 {
        let mut cfg = base(dir, &format!("resume-{cut}"), 42, cut.max(1), CostMetric::Latency);
        if cut > 0 {
            run(&cfg)?;
        }
        // Also tear the next line half-way on some boundaries.
        if cut % 10 == 5 {
            let written = read(&cfg)?.len();
            let rest = &reference[written..];
            let line_end = rest.iter().position(|&c| c == b'\n').unwrap_or(rest.len());
            let mut torn = read(&cfg)?;
            torn.extend_from_slice(&rest[..line_end / 2]);
            fs::write(cfg.log_path(), torn).map_err(|e| e.to_string())?;
        }
        cfg.trials = 100;
        run(&cfg)?;
        if read(&cfg)? != reference {
            return Err(format!("resume after {cut} trials diverged"));
        }
    }
    Ok("byte-identical reruns; resume from every boundary 0..=100 (and torn lines) matches".into())
}

fn random_log(rng: &mut ChaCha8Rng, spec: &FitnessSpec, scale: f64) -> (TrialLog, TrialLog) {
    let space = SearchSpace::default();
    let n = rng.gen_range(1..80);
    let mut plain = Vec::new();
    let mut scaled = Vec::new();
    for index in 0..n {
        let genome = space.sample_uniform(rng);
        let failed = rng.gen_bool(0.05);
        let accuracy = rng.gen_range(0.05..1.0);
        let lat = 10f64.powf(rng.gen_range(-2.0..3.0));
        let en = 10f64.powf(rng.gen_range(-3.0..2.0));
        let make = |l: f64, e: f64| Trial {
            index,
            genome: genome.clone(),
            status: if failed { TrialStatus::Failed } else { TrialStatus::Ok },
            accuracy: (!failed).then_some(accuracy),
            latency_ms: l,
            energy_mj: e,
            fitness: if failed {
                f64::NEG_INFINITY
            } else {
                fitness_eval(accuracy, l, e, spec).unwrap()
            },
            suggestion_path: SuggestionPath::Prior,
            source: (!failed).then_some(Source::Surrogate),
            error: failed.then(|| "failed".to_string()),
            started_at: String::new(),
            wall_time_s: 0.0,
            seed: 0,
        };
        plain.push(make(lat, en));
        scaled.push(make(lat * scale, en * scale));
    }
    (TrialLog::new(plain), TrialLog::new(scaled))
}

fn argmax_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(533);
    let mut checked = 0;
    for case in 0..1000 {
        let metric = [CostMetric::None, CostMetric::Latency, CostMetric::Energy][case % 3];
        let spec = FitnessSpec::new(metric, rng.gen_range(1.0..4.0));
        let scale = 10f64.powf(rng.gen_range(-6.0..6.0));
        let (plain, scaled) = random_log(&mut rng, &spec, scale);
        match (report_best(&plain, 1), report_best(&scaled, 1)) {
            (Ok(a), Ok(b)) => {
                if a[0].genome != b[0].genome {
                    return Err(format!(
                        "case {case}: top {} becomes {} after scaling by {scale}",
                        a[0].genome, b[0].genome
                    ));
                }
                checked += 1;
            }
            (Err(_), Err(_)) => {}
            _ => return Err(format!("case {case}: report availability changed")),
        }
    }
    Ok(format!("1000 randomized logs ({checked} with successes), top genome unchanged"))
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temporary directory");
    type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;
    let criteria: Vec<(&str, Check)> = vec![
        ("search-space count", Box::new(search_space_count)),
        ("cost-model oracle equivalence", Box::new(oracle_equivalence)),
        ("IMC trend properties", Box::new(imc_trends)),
        ("TPE beats random", Box::new(|| tpe_beats_random(dir.path()))),
        ("fitness-driven architecture trends", Box::new(|| architecture_trends(dir.path()))),
        ("determinism and resume", Box::new(|| determinism_and_resume(dir.path()))),
        ("fitness argmax invariance", Box::new(argmax_invariance)),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} acceptance criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
