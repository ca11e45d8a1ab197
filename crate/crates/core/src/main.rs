use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context as _, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use cdrtour::config::RunConfig;
use cdrtour::congestion::{
    assign_to_links, build_od_matrix, fit_scale, read_link_flows, read_od, snap_towers, write_link_flows, write_od,
    SegmentFilter,
};
use cdrtour::economics::{income_by_country, subscriber_prices, write_income_by_country, IncomeProfile};
use cdrtour::events::{compare_events, evaluate_events, read_events, write_radar, Analysis, EventDef, Indicator};
use cdrtour::indicators::{
    interest_profiles, segmented_flows, spatial_distribution, InterestProfile, Period, SegmentedFlow,
    SpatialDistribution,
};
use cdrtour::ingest::{
    load_reference, read_cdr_table, read_counts, read_road_graph, read_towers, CdrTable, Country, ParseReport, Policy,
    ReferenceBundle,
};
use cdrtour::mobility::{classify_subscribers, extract_all_visits, summarize_visits, write_visits};
use cdrtour::output::{atomic_write, csv_io, DirSink};
use cdrtour::synth::{generate, SynthConfig};
use cdrtour::time::{format_instant, TimeWindow};

#[derive(Parser)]
#[command(name = "cdrtour", version, about = "Tourism indicators from call detail records")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    #[value(name = "fail_fast", alias = "fail-fast")]
    FailFast,
    Skip,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (JSON); synth takes a generator config instead.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Malformed CDR rows abort the run or are skipped and counted.
    #[arg(long, value_enum, default_value = "skip")]
    policy: PolicyArg,
}

#[derive(Subcommand)]
enum Command {
    /// Load and cross-check every input.
    Validate(Common),
    /// Generate a synthetic world.
    Synth(Common),
    /// Tourist flows, spatial distribution, interests and income.
    Indicators(Common),
    /// Tower-to-tower movement matrix.
    Od {
        #[command(flatten)]
        common: Common,
        /// Subscribers contributing movements: all, tourists or a country code.
        #[arg(long, default_value = "all")]
        segment: SegmentFilter,
    },
    /// Assign the movement matrix onto road links.
    Assign(Common),
    /// Fit the movement-to-vehicle scale against traffic counts.
    Scale {
        #[command(flatten)]
        common: Common,
        /// Fit one scale per time window in addition to the pooled one.
        #[arg(long)]
        per_window: bool,
    },
    /// Scorecards for events.
    Event {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        events: Option<PathBuf>,
    },
    /// Scorecards plus normalized radar values across events.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        events: Option<PathBuf>,
        /// Indicators mapped to 1 - normalized value.
        #[arg(long, value_delimiter = ',')]
        invert: Vec<String>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Validate(_) => "validate",
            Command::Synth(_) => "synth",
            Command::Indicators(_) => "indicators",
            Command::Od { .. } => "od",
            Command::Assign(_) => "assign",
            Command::Scale { .. } => "scale",
            Command::Event { .. } => "event",
            Command::Compare { .. } => "compare",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Validate(c) | Command::Synth(c) | Command::Indicators(c) | Command::Assign(c) => c,
            Command::Od { common, .. }
            | Command::Scale { common, .. }
            | Command::Event { common, .. }
            | Command::Compare { common, .. } => common,
        }
    }
}

#[derive(Serialize, Clone)]
struct FileDigest {
    path: String,
    sha256: Option<String>,
    bytes: Option<u64>,
}

#[derive(Serialize)]
struct InputEntry {
    name: String,
    files: Vec<FileDigest>,
}

#[derive(Serialize)]
struct Manifest {
    subcommand: String,
    version: String,
    status: String,
    error: Option<String>,
    inputs: Vec<InputEntry>,
    parameters: serde_json::Value,
    outputs: Vec<FileDigest>,
}

fn digest(path: &Path, shown: String) -> FileDigest {
    let hashed = (|| -> io::Result<(String, u64)> {
        let mut f = BufReader::with_capacity(1 << 20, File::open(path)?);
        let mut h = Sha256::new();
        let mut buf = vec![0u8; 1 << 20];
        let mut n = 0u64;
        loop {
            let k = f.read(&mut buf)?;
            if k == 0 {
                break;
            }
            h.update(&buf[..k]);
            n += k as u64;
        }
        Ok((hex::encode(h.finalize()), n))
    })();
    match hashed {
        Ok((sha, n)) => FileDigest {
            path: shown,
            sha256: Some(sha),
            bytes: Some(n),
        },
        Err(_) => FileDigest {
            path: shown,
            sha256: None,
            bytes: None,
        },
    }
}

/// Collects what a run read and wrote for its manifest.
struct Run {
    subcommand: &'static str,
    out: PathBuf,
    inputs: Vec<(String, Vec<PathBuf>)>,
    outputs: Vec<PathBuf>,
    parameters: serde_json::Value,
}

impl Run {
    fn input(&mut self, name: &str, files: &[&Path]) {
        self.inputs
            .push((name.to_string(), files.iter().map(|p| p.to_path_buf()).collect()));
    }

    fn out_path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Writes `name` in the output directory atomically.
    fn write(&mut self, name: &str, body: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<()> {
        let path = self.out_path(name);
        atomic_write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        if !self.outputs.contains(&path) {
            self.outputs.push(path);
        }
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value).map_err(io::Error::from)?;
            w.write_all(b"\n")
        })
    }

    fn manifest(&self, error: Option<String>) -> Manifest {
        // Files under the output directory are named relative to it.
        let relative = |p: &Path| {
            p.strip_prefix(&self.out)
                .map(|r| r.display().to_string())
                .unwrap_or_else(|_| p.display().to_string())
        };
        Manifest {
            subcommand: self.subcommand.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            status: if error.is_some() { "error" } else { "ok" }.to_string(),
            error,
            inputs: self
                .inputs
                .iter()
                .map(|(name, files)| InputEntry {
                    name: name.clone(),
                    files: files.iter().map(|f| digest(f, relative(f))).collect(),
                })
                .collect(),
            parameters: self.parameters.clone(),
            outputs: self.outputs.iter().map(|p| digest(p, relative(p))).collect(),
        }
    }
}

fn parameters(cfg: &RunConfig, extra: serde_json::Value) -> serde_json::Value {
    let mut v = serde_json::json!({
        "home_country": cfg.home_country,
        "utc_offset_minutes": cfg.utc_offset_minutes,
        "visit_gap_days": cfg.visit_gap_days,
        "window_minutes": cfg.window_minutes,
        "max_gap_minutes": cfg.max_gap_minutes,
        "snap_max_m": cfg.snap_max_m,
        "poi_radius_m": cfg.poi_radius_m,
        "day_hours": cfg.day_hours,
    });
    if let (Some(map), serde_json::Value::Object(extra)) = (v.as_object_mut(), extra) {
        map.extend(extra);
    }
    v
}

fn policy(common: &Common) -> Policy {
    match common.policy {
        PolicyArg::FailFast => Policy::FailFast,
        PolicyArg::Skip => Policy::SkipAndCount,
    }
}

fn load_cdr(path: &Path, policy: Policy) -> Result<(CdrTable, ParseReport)> {
    let label = path.display().to_string();
    let f = File::open(path).with_context(|| format!("{label}: cannot open"))?;
    let (table, report) = read_cdr_table(BufReader::with_capacity(1 << 20, f), &label, policy)?;
    if report.rows_rejected > 0 {
        eprintln!("warning: {label}: {} malformed rows skipped", report.rows_rejected);
    }
    Ok((table, report))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("{}: cannot open", path.display()))?,
    ))
}

fn load_events(path: &Path) -> Result<Vec<EventDef>> {
    read_events(open(path)?).with_context(|| path.display().to_string())
}

fn reference_inputs(run: &mut Run, cfg: &RunConfig) {
    run.input("towers", &[&cfg.towers]);
    run.input("roads", &[&cfg.road_nodes, &cfg.road_edges]);
    run.input("pois", &[&cfg.pois]);
    run.input("counts", &[&cfg.counts]);
    run.input("tac_prices", &[&cfg.tac_prices]);
}

#[derive(Serialize)]
struct ValidationReport {
    cdr: ParseReport,
    subscribers: usize,
    towers: usize,
    road_nodes: usize,
    road_edges: usize,
    road_arcs: usize,
    pois: usize,
    unknown_poi_categories: usize,
    counts: usize,
    tac_prices: usize,
    cdr_towers_missing: Vec<String>,
}

fn validate(run: &mut Run, cfg: &RunConfig, policy: Policy) -> Result<()> {
    run.input("cdr", &[&cfg.cdr]);
    reference_inputs(run, cfg);
    let reference = load_reference(&cfg.reference_paths())?;
    let (table, report) = load_cdr(&cfg.cdr, policy)?;
    let missing: Vec<String> = table
        .tower_ids()
        .iter()
        .filter(|t| reference.towers.get(t).is_none())
        .map(|t| t.to_string())
        .collect();
    let r = ValidationReport {
        cdr: report,
        subscribers: table.n_subscribers(),
        towers: reference.towers.len(),
        road_nodes: reference.graph.nodes().len(),
        road_edges: reference.graph.edges().len(),
        road_arcs: reference.graph.arcs().len(),
        pois: reference.pois.len(),
        unknown_poi_categories: reference.unknown_poi_categories,
        counts: reference.counts.len(),
        tac_prices: reference.tac_prices.len(),
        cdr_towers_missing: missing,
    };
    run.write_json("validation.json", &r)
}

#[derive(Serialize)]
struct SubscriberCounts {
    total: usize,
    tourists: usize,
    locals: usize,
    mixed_country: usize,
}

#[derive(Serialize)]
struct IndicatorsReport {
    window_start: Option<String>,
    window_end: Option<String>,
    cdr: ParseReport,
    subscribers: SubscriberCounts,
    flows: SegmentedFlow,
    spatial_day: SpatialDistribution,
    spatial_night: SpatialDistribution,
    interests: BTreeMap<Country, InterestProfile>,
    income: BTreeMap<Country, IncomeProfile>,
}

fn indicators(run: &mut Run, cfg: &RunConfig, policy: Policy) -> Result<()> {
    run.input("cdr", &[&cfg.cdr]);
    run.input("towers", &[&cfg.towers]);
    run.input("pois", &[&cfg.pois]);
    run.input("tac_prices", &[&cfg.tac_prices]);
    let offset = cfg.offset();
    let towers = read_towers(open(&cfg.towers)?, &cfg.towers.display().to_string())?;
    let (pois, _) = cdrtour::ingest::read_pois(open(&cfg.pois)?, &cfg.pois.display().to_string())?;
    let prices = cdrtour::ingest::read_tac_prices(open(&cfg.tac_prices)?, &cfg.tac_prices.display().to_string())?;
    let (table, report) = load_cdr(&cfg.cdr, policy)?;
    let classes = classify_subscribers(&table, cfg.home()?);
    let visits = extract_all_visits(&table, cfg.visit_gap_days, offset);
    let window = table
        .time_span()
        .and_then(|(a, b)| TimeWindow::from_local_days(offset.local_day(a), offset.local_day(b), offset));
    let empty = TimeWindow { start: 0, end: 1 };
    let w = window.unwrap_or(empty);
    let spatial = |period| spatial_distribution(&table, &classes, w, period, &towers, offset, cfg.day_hours());
    let tourists = classes.iter().filter(|c| c.is_tourist()).count();
    let report = IndicatorsReport {
        window_start: window.map(|w| format_instant(w.start)),
        window_end: window.map(|w| format_instant(w.end)),
        cdr: report,
        subscribers: SubscriberCounts {
            total: classes.len(),
            tourists,
            locals: classes.len() - tourists,
            mixed_country: classes.mixed_country,
        },
        flows: segmented_flows(&visits, &classes, w, offset),
        spatial_day: spatial(Period::Day),
        spatial_night: spatial(Period::Night),
        interests: interest_profiles(&table, &classes, &towers, &pois, cfg.poi_radius_m, offset),
        income: income_by_country(&classes, &subscriber_prices(&table, &prices)),
    };
    let summary = summarize_visits(&visits, &classes);
    run.write("visits.csv", |w| write_visits(w, &summary).map_err(csv_io))?;
    run.write("income_by_country.csv", |w| {
        write_income_by_country(w, &report.income).map_err(csv_io)
    })?;
    run.write_json("indicators.json", &report)
}

fn od(run: &mut Run, cfg: &RunConfig, policy: Policy, segment: SegmentFilter) -> Result<()> {
    run.input("cdr", &[&cfg.cdr]);
    let (table, _) = load_cdr(&cfg.cdr, policy)?;
    let classes = classify_subscribers(&table, cfg.home()?);
    let m = build_od_matrix(&table, &classes, segment, cfg.window_minutes, cfg.max_gap_minutes);
    drop(table);
    run.write("od.csv", |w| write_od(w, &m).map_err(csv_io))
}

fn load_graph(cfg: &RunConfig) -> Result<cdrtour::ingest::RoadGraph> {
    Ok(read_road_graph(
        open(&cfg.road_nodes)?,
        &cfg.road_nodes.display().to_string(),
        open(&cfg.road_edges)?,
        &cfg.road_edges.display().to_string(),
    )?)
}

#[derive(Serialize)]
struct AssignReport {
    od_cells: usize,
    od_movements: u64,
    unreachable_pairs: u64,
    unreachable_movements: u64,
    link_flow_cells: usize,
    snapping: BTreeMap<String, String>,
}

fn assign(run: &mut Run, cfg: &RunConfig) -> Result<()> {
    let od_path = run.out_path("od.csv");
    run.input("od", &[&od_path]);
    run.input("towers", &[&cfg.towers]);
    run.input("roads", &[&cfg.road_nodes, &cfg.road_edges]);
    let towers = read_towers(open(&cfg.towers)?, &cfg.towers.display().to_string())?;
    let graph = load_graph(cfg)?;
    let m = read_od(open(&od_path)?, &od_path.display().to_string(), cfg.window_minutes)?;
    let snapping = snap_towers(&towers, &graph, cfg.snap_max_m)?;
    let a = assign_to_links(&m, &graph, &snapping)?;
    if a.unreachable_pairs > 0 {
        eprintln!(
            "warning: {} O-D pairs unreachable on the road graph",
            a.unreachable_pairs
        );
    }
    run.write("link_flows.csv", |w| {
        write_link_flows(w, &a.flows, &graph, None).map_err(csv_io)
    })?;
    let report = AssignReport {
        od_cells: m.cells().len(),
        od_movements: m.total(),
        unreachable_pairs: a.unreachable_pairs,
        unreachable_movements: a.unreachable_movements,
        link_flow_cells: a.flows.cells().len(),
        snapping: snapping
            .iter()
            .map(|(t, &n)| (t.clone(), graph.nodes()[n].node_id.clone()))
            .collect(),
    };
    run.write_json("assign.json", &report)
}

fn scale(run: &mut Run, cfg: &RunConfig, per_window: bool) -> Result<()> {
    let flows_path = run.out_path("link_flows.csv");
    run.input("link_flows", &[&flows_path]);
    run.input("roads", &[&cfg.road_nodes, &cfg.road_edges]);
    run.input("counts", &[&cfg.counts]);
    let graph = load_graph(cfg)?;
    let counts = read_counts(open(&cfg.counts)?, &cfg.counts.display().to_string())?;
    for c in &counts {
        if graph.edge(&c.edge_id).is_none() {
            return Err(anyhow!("count references unknown edge {}", c.edge_id));
        }
    }
    let flows = read_link_flows(
        open(&flows_path)?,
        &flows_path.display().to_string(),
        &graph,
        cfg.window_minutes,
    )?;
    let s = fit_scale(&flows, &graph, &counts, per_window)?;
    run.write_json("scale.json", &s)?;
    run.write("link_flows.csv", |w| {
        write_link_flows(w, &flows, &graph, Some(&s)).map_err(csv_io)
    })
}

fn events_path(cfg: &RunConfig, flag: &Option<PathBuf>) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| cfg.events.clone())
        .ok_or_else(|| anyhow!("no events file: pass --events or set `events` in the config"))
}

fn analysis_inputs(run: &mut Run, cfg: &RunConfig, events: &Path) -> Result<(ReferenceBundle, Vec<EventDef>)> {
    run.input("cdr", &[&cfg.cdr]);
    reference_inputs(run, cfg);
    run.input("events", &[events]);
    let events = load_events(events)?;
    let reference = load_reference(&cfg.reference_paths())?;
    Ok((reference, events))
}

fn event(run: &mut Run, cfg: &RunConfig, policy: Policy, events: &Path, invert: Option<&[String]>) -> Result<()> {
    let invert: BTreeSet<Indicator> = invert
        .unwrap_or_default()
        .iter()
        .map(|s| s.parse())
        .collect::<Result<_, _>>()?;
    let (reference, events) = analysis_inputs(run, cfg, events)?;
    let (table, _) = load_cdr(&cfg.cdr, policy)?;
    let analysis = Analysis::new(&table, &reference, cfg.analysis_params()?)?;
    let cards = evaluate_events(&analysis, &events);
    run.write_json("scorecards.json", &cards)?;
    if run.subcommand == "compare" {
        let rows = compare_events(&cards, &invert)?;
        run.write("radar.csv", |w| write_radar(w, &rows).map_err(csv_io))?;
    }
    Ok(())
}

fn synth(run: &mut Run, common: &Common) -> Result<()> {
    let config = match &common.config {
        Some(p) => {
            run.input("synth_config", &[p]);
            let text = std::fs::read(p).with_context(|| format!("{}: cannot read", p.display()))?;
            serde_json::from_slice::<SynthConfig>(&text).with_context(|| p.display().to_string())?
        }
        None => SynthConfig::default(),
    };
    run.parameters = serde_json::to_value(&config)?;
    let mut sink = DirSink::new(&run.out)?;
    let summary = generate(&config, &mut sink)?;
    run.outputs.extend(sink.written);
    eprintln!(
        "synth: {} subscribers, {} records, {} visits, {} trips",
        summary.n_subscribers, summary.n_records, summary.n_visits, summary.n_trips
    );
    Ok(())
}

fn load_run_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(command: &Command, run: &mut Run) -> Result<()> {
    let common = command.common();
    if let Command::Synth(c) = command {
        return synth(run, c);
    }
    let cfg = load_run_config(common)?;
    run.out = cfg.out.clone();
    std::fs::create_dir_all(&run.out).with_context(|| format!("{}: cannot create", run.out.display()))?;
    let pol = policy(common);
    let policy_name = match common.policy {
        PolicyArg::FailFast => "fail_fast",
        PolicyArg::Skip => "skip",
    };
    let base = serde_json::json!({ "policy": policy_name });
    run.parameters = parameters(&cfg, base);
    match command {
        Command::Validate(_) => validate(run, &cfg, pol),
        Command::Indicators(_) => indicators(run, &cfg, pol),
        Command::Od { segment, .. } => {
            run.parameters = parameters(
                &cfg,
                serde_json::json!({ "policy": policy_name, "segment": segment.to_string() }),
            );
            od(run, &cfg, pol, *segment)
        }
        Command::Assign(_) => assign(run, &cfg),
        Command::Scale { per_window, .. } => {
            run.parameters = parameters(&cfg, serde_json::json!({ "per_window": per_window }));
            scale(run, &cfg, *per_window)
        }
        Command::Event { events, .. } => {
            let path = events_path(&cfg, events)?;
            event(run, &cfg, pol, &path, None)
        }
        Command::Compare { events, invert, .. } => {
            let path = events_path(&cfg, events)?;
            run.parameters = parameters(&cfg, serde_json::json!({ "policy": policy_name, "invert": invert }));
            event(run, &cfg, pol, &path, Some(invert))
        }
        Command::Synth(_) => unreachable!("handled above"),
    }
}

/// Error chain on one line; a cause already quoted by its parent is dropped.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !msg.contains(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    msg
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let common = cli.command.common();
    if let Some(n) = common.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let mut run = Run {
        subcommand: cli.command.name(),
        out: common.out.clone().unwrap_or_else(|| PathBuf::from("out")),
        inputs: Vec::new(),
        outputs: Vec::new(),
        parameters: serde_json::Value::Null,
    };
    let result = execute(&cli.command, &mut run);
    let error = result.as_ref().err().map(describe);
    let manifest = run.manifest(error.clone());
    let manifest_name = format!("manifest-{}.json", run.subcommand);
    let written = std::fs::create_dir_all(&run.out)
        .map_err(anyhow::Error::from)
        .and_then(|_| run.write_json(&manifest_name, &manifest));
    if let Some(msg) = error {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    if let Err(e) = written {
        eprintln!("error: {}", describe(&e));
        return ExitCode::from(2);
    }
    ExitCode::SUCCESS
}
