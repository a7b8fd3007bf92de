//! Subcommand implementations. Every command writes its reports under
//! `--out` and prints a short summary; equal flags give byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use helios_core::eval::{run_gap_suite, BaselineKind, Method, OracleLimits, SuiteConfig};
use helios_core::gen::{generate, Pattern, PromptShape, SynthSpec};
use helios_core::ir::{bind_inputs, CompiledGraph};
use helios_core::optimizer::PromptCache;
use helios_core::pipeline::{run_ablation, run_pipeline, PipelineConfig, RunReport, Toggles};
use helios_core::sim::{SimConfig, SynthConfig, WorkerSim};
use helios_core::{ProfileStats, Vocab};
use serde::Serialize;

use crate::args::{AblateArgs, Command, EngineArgs, GapArgs, GenArgs, ReportFormat, RunArgs};
use crate::format;

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run(a) => cmd_run(&a),
        Command::Gap(a) => cmd_gap(&a),
        Command::Gen(a) => cmd_gen(&a),
        Command::Ablate(a) => cmd_ablate(&a),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn csv_string<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// A flat record as JSON, or as `key,value` CSV rows.
fn record_string<T: Serialize>(value: &T, fmt: ReportFormat) -> Result<String> {
    match fmt {
        ReportFormat::Json => json_string(value),
        ReportFormat::Csv => {
            let serde_json::Value::Object(map) = serde_json::to_value(value)? else {
                bail!("report is not a record");
            };
            #[derive(Serialize)]
            struct Row {
                key: String,
                value: String,
            }
            csv_string(map.into_iter().map(|(key, v)| Row {
                key,
                value: match v {
                    serde_json::Value::String(s) => s,
                    other => other.to_string(),
                },
            }))
        }
    }
}

fn rows_string<T: Serialize>(rows: &[T], fmt: ReportFormat) -> Result<String> {
    match fmt {
        ReportFormat::Json => json_string(rows),
        ReportFormat::Csv => csv_string(rows),
    }
}

/// Everything a run needs, loaded from the engine flags.
pub struct Loaded {
    pub vocab: Vocab,
    pub graph: helios_core::WorkflowGraph,
    pub compiled: CompiledGraph,
    pub profile: ProfileStats,
    pub config: PipelineConfig,
}

pub fn parse_method(name: &str, seed: u64) -> Result<Method> {
    match name.parse::<Method>() {
        Ok(Method::Baseline(BaselineKind::Random { .. })) => Ok(Method::Baseline(BaselineKind::Random { seed })),
        Ok(m) => Ok(m),
        Err(e) => bail!("{e}; expected cache-aware, querywise, opwise, random or lspf"),
    }
}

pub fn toggles(a: &EngineArgs) -> Toggles {
    Toggles {
        prune: !a.no_prune,
        cse: !a.no_cse,
        prompt_cache: !a.no_prompt_cache,
        proactive_kv: !a.no_proactive_kv,
        cas: !a.no_cas,
    }
}

pub fn sim_config(a: &EngineArgs) -> Result<SimConfig> {
    ensure!(a.workers >= 1, "at least one worker is required");
    let caps = match a.capacity.len() {
        1 => vec![a.capacity[0]; a.workers],
        n if n == a.workers => a.capacity.clone(),
        n => bail!("{n} capacities given for {} workers", a.workers),
    };
    let mut cfg = SimConfig::uniform(a.workers, 0);
    cfg.workers = caps
        .into_iter()
        .map(|c| {
            let mut w = WorkerSim::new(c);
            if let Some(b) = a.budget {
                w.budget = b;
            }
            w.prefix_caching = !a.no_prefix_caching;
            w
        })
        .collect();
    cfg.pin_threshold = a.pin_threshold;
    cfg.synth = SynthConfig { stochastic: a.stochastic, seed: a.seed };
    cfg.validate()?;
    Ok(cfg)
}

fn compile(graph: &helios_core::WorkflowGraph, inputs: &Path, vocab: &mut Vocab) -> Result<CompiledGraph> {
    let batch = format::parse_inputs(&read(inputs)?, vocab).with_context(|| format!("in {}", inputs.display()))?;
    let (compiled, ignored) = bind_inputs(graph.clone(), batch)?;
    for name in ignored {
        eprintln!("warning: input '{name}' is not used by the workflow");
    }
    Ok(compiled)
}

pub fn load(a: &EngineArgs) -> Result<Loaded> {
    let Some(profile_path) = &a.profile else {
        bail!("profile required");
    };
    let mut vocab = Vocab::new();
    let graph = format::parse_workflow(&read(&a.workflow)?, &mut vocab)
        .with_context(|| format!("in {}", a.workflow.display()))?;
    let compiled = compile(&graph, &a.inputs, &mut vocab)?;
    let profile = format::parse_profile(&read(profile_path)?).with_context(|| format!("in {}", profile_path.display()))?;
    profile.check_covers(&graph)?;
    let method = parse_method(&a.scheduler, a.seed)?;
    let config = PipelineConfig::new(method, toggles(a), sim_config(a)?);
    Ok(Loaded { vocab, graph, compiled, profile, config })
}

fn initial_cache(a: &EngineArgs) -> Result<PromptCache> {
    match &a.cache {
        Some(p) => Ok(format::parse_cache(&read(p)?, a.cache_capacity).with_context(|| format!("in {}", p.display()))?),
        None => Ok(PromptCache::new(a.cache_capacity)),
    }
}

#[derive(Serialize)]
struct RunSummary<'a> {
    method: &'a str,
    scheduler_seed: u64,
    prune: bool,
    cse: bool,
    prompt_cache: bool,
    proactive_kv: bool,
    cas: bool,
    pruned_nodes: usize,
    merged_nodes: usize,
    substituted_nodes: usize,
    llm_ops: usize,
    calls: usize,
    cost_total: f64,
    iterations: u64,
    prompt_tokens: u64,
    prefill_computed: u64,
    prefill_cached: u64,
    hit_rate: f64,
    pinned_tokens: u64,
}

fn summary<'a>(r: &'a RunReport, seed: u64) -> RunSummary<'a> {
    RunSummary {
        method: &r.method,
        scheduler_seed: seed,
        prune: r.toggles.prune,
        cse: r.toggles.cse,
        prompt_cache: r.toggles.prompt_cache,
        proactive_kv: r.toggles.proactive_kv,
        cas: r.toggles.cas,
        pruned_nodes: r.optimize.pruned,
        merged_nodes: r.optimize.merged,
        substituted_nodes: r.optimize.substituted,
        llm_ops: r.llm_ops,
        calls: r.cost_calls.len(),
        cost_total: r.cost_total,
        iterations: r.sim.iterations,
        prompt_tokens: r.sim.prompt_tokens,
        prefill_computed: r.sim.prefill_computed,
        prefill_cached: r.sim.prefill_cached,
        hit_rate: r.sim.hit_rate,
        pinned_tokens: r.sim.pinned_tokens,
    }
}

#[derive(Serialize)]
struct ScheduleDoc<'a> {
    method: &'a str,
    /// Per worker, inner sequences of operator ids (cache-aware only).
    #[serde(skip_serializing_if = "Option::is_none")]
    soft_schedule: Option<&'a Vec<Vec<Vec<helios_core::NodeId>>>>,
    /// Per worker, `[operator, query]` calls in dispatch order.
    calls: &'a Vec<Vec<(helios_core::NodeId, u32)>>,
}

pub fn cmd_run(args: &RunArgs) -> Result<()> {
    let a = &args.engine;
    let loaded = load(a)?;
    let mut cache = initial_cache(a)?;
    let report = run_pipeline(&loaded.compiled, &loaded.profile, &loaded.config, Some(&mut cache))?;
    let out = &a.out;
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let ext = a.format.ext();
    let doc = ScheduleDoc {
        method: &report.method,
        soft_schedule: report.soft_schedule.as_ref().map(|s| &s.workers),
        calls: &report.calls.workers,
    };
    write(out, "schedule.json", &json_string(&doc)?)?;
    write(out, &format!("metrics.{ext}"), &record_string(&summary(&report, a.seed), a.format)?)?;
    write(out, &format!("workers.{ext}"), &rows_string(&report.sim.workers, a.format)?)?;
    write(out, &format!("cost.{ext}"), &rows_string(&report.cost_calls, a.format)?)?;
    write(out, "trace.csv", &csv_string(&report.sim.trace)?)?;
    write(out, "latency.csv", &csv_string(&report.sim.calls)?)?;
    write(out, "outputs.json", &format::outputs_to_json(&report.outputs, &loaded.vocab))?;
    write(out, "trt.txt", &report.call_tree.dump_text())?;
    write(out, "trt.dot", &report.call_tree.dump_dot())?;
    if report.toggles.prompt_cache {
        write(out, "cache.json", &format::cache_to_json(&cache))?;
    }
    println!(
        "{}: {} calls, {} token steps, hit rate {:.2}%, cost-model makespan {:.3}",
        report.method,
        report.cost_calls.len(),
        report.sim.iterations,
        report.sim.hit_rate,
        report.cost_total
    );
    Ok(())
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let a = &args.engine;
    let mut loaded = load(a)?;
    let warm = match &args.warmup_inputs {
        Some(p) => Some(compile(&loaded.graph, p, &mut loaded.vocab)?),
        None => None,
    };
    ensure!(a.cache.is_none(), "ablate starts every variant from an empty prompt cache; use --warmup-inputs");
    let rows = run_ablation(warm.as_ref(), &loaded.compiled, &loaded.profile, &loaded.config, a.cache_capacity)?;
    let out = &a.out;
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    write(out, &format!("ablation.{}", a.format.ext()), &rows_string(&rows, a.format)?)?;
    println!("{:<18} {:>10} {:>9} {:>9}", "variant", "steps", "delta%", "hit%");
    for r in &rows {
        println!("{:<18} {:>10} {:>9.2} {:>9.2}", r.variant, r.iterations, r.delta, r.hit_rate);
    }
    Ok(())
}

pub fn cmd_gap(args: &GapArgs) -> Result<()> {
    let mut suite = SuiteConfig::standard();
    if !args.only.is_empty() {
        for name in &args.only {
            ensure!(suite.instances.iter().any(|i| &i.name == name), "unknown suite configuration '{name}'");
        }
        suite.instances.retain(|i| args.only.contains(&i.name));
    }
    suite.seeds = args.seeds.clone();
    if let Some(limit) = args.limit {
        suite.limits = OracleLimits { max_calls: limit };
    }
    let report = run_gap_suite(&suite)?;
    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    write(&args.out, "gap.csv", &csv_string(&report.rows)?)?;
    write(&args.out, &format!("gap_summary.{}", args.format.ext()), &rows_string(&report.aggregates, args.format)?)?;
    println!("{:<12} {:>8} {:>8} {:>8} {:>8}", "method", "avg%", "std", "min%", "max%");
    for g in &report.aggregates {
        println!("{:<12} {:>8.2} {:>8.2} {:>8.2} {:>8.2}", g.method, g.avg, g.std, g.min, g.max);
    }
    Ok(())
}

pub fn synth_spec(args: &GenArgs) -> Result<SynthSpec> {
    let pattern: Pattern = args.pattern.parse()?;
    let mut spec = SynthSpec::new(pattern);
    if let Some(n) = args.agents {
        spec.agents = n;
    }
    if let Some(r) = args.rounds {
        spec.rounds = r;
    }
    spec.batch = args.batch;
    let [s, c, q, o] = args.shape[..] else {
        bail!("--shape takes four lengths: system,context,question,output");
    };
    spec.shape = PromptShape::new(s, c, q, o);
    ensure!((0.0..1.0).contains(&args.jitter), "--jitter must lie in [0, 1)");
    spec.jitter = args.jitter;
    spec.day = args.day;
    spec.shared_context = args.shared_context;
    spec.same_role = args.same_role;
    spec.validate()?;
    Ok(spec)
}

pub fn cmd_gen(args: &GenArgs) -> Result<()> {
    let spec = synth_spec(args)?;
    let workload = generate(&spec, args.seed)?;
    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    let vocab = Vocab::new();
    write(&args.out, "workflow.json", &format::workflow_to_json(&workload.graph, &vocab))?;
    write(&args.out, "inputs.json", &format::inputs_to_json(&workload))?;
    write(&args.out, "profile.json", &format::profile_to_json(&workload.profile))?;
    let llm = workload.graph.llm_ids().len();
    let inputs: BTreeMap<_, _> = workload.inputs.iter().map(|(k, v)| (k.as_str(), v.len())).collect();
    println!(
        "{}: {} nodes, {} LLM operators, batch {}, inputs {:?}",
        spec.pattern,
        workload.graph.len(),
        llm,
        spec.batch,
        inputs.keys().collect::<Vec<_>>()
    );
    Ok(())
}
