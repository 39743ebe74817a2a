//! roomforge command line: ingest raw rooms, stitch floor plans from
//! relation graphs, match rooms onto existing 2D layouts, deform meshes,
//! compute metrics, and render SVG previews.
//!
//! Every artifact is written in canonical form (sorted JSON keys,
//! round-trip float formatting), so identical inputs and seeds produce
//! byte-identical outputs. Failures exit nonzero after printing a
//! machine-readable error document to stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use roomforge::deform::{
    deform_room, outline_to_meters, DeformError, IndexedMesh, OutlineCorrespondence,
};
use roomforge::geom::GeomError;
use roomforge::jsonio::{canonical_json, to_canonical};
use roomforge::metrics::{self, MetricsError, MetricsReport};
use roomforge::miqp::MiqpOptions;
use roomforge::model::{
    ingest_room, load_raw_rooms, FloorPlan, ModelError, RelationGraph, Room, RoomDatabase,
};
use roomforge::pipeline::{
    match_layout, stitch, PipelineError, ScorerKind, StitchOptions,
};
use roomforge::render::render_svg;
use roomforge::retrieval::{MatchScore, RetrievalError, ScoreWeights};
use roomforge::synth::synth_room_mesh;

// ---------------------------------------------------------------------------
// Error document

struct CliError {
    module: &'static str,
    entity: Option<String>,
    message: String,
}

impl CliError {
    fn new(module: &'static str, err: impl std::fmt::Display) -> CliError {
        CliError { module, entity: None, message: err.to_string() }
    }

    fn with_entity(
        module: &'static str,
        entity: impl Into<String>,
        err: impl std::fmt::Display,
    ) -> CliError {
        CliError { module, entity: Some(entity.into()), message: err.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> CliError {
        CliError::new("cli", e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> CliError {
        CliError::new("cli", e)
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> CliError {
        match &e {
            ModelError::UnknownRoomRef(id) => CliError::with_entity("model", id.clone(), &e),
            ModelError::UnclosedOutline(id) => CliError::with_entity("model", id.clone(), &e),
            _ => CliError::new("model", e),
        }
    }
}

impl From<GeomError> for CliError {
    fn from(e: GeomError) -> CliError {
        CliError::new("geom", e)
    }
}

impl From<RetrievalError> for CliError {
    fn from(e: RetrievalError) -> CliError {
        CliError::new("retrieval", e)
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> CliError {
        match &e {
            PipelineError::Model(inner) => CliError::new("model", inner),
            PipelineError::Miqp(inner) => CliError::new("miqp", inner),
            PipelineError::Retrieval(inner) => CliError::new("retrieval", inner),
            PipelineError::UnsatisfiableNode(id) => {
                CliError::with_entity("pipeline", id.clone(), &e)
            }
            PipelineError::UnsatisfiableRoom(id) => {
                CliError::with_entity("pipeline", id.clone(), &e)
            }
            PipelineError::StepFailure { node, .. } => {
                CliError::with_entity("pipeline", node.clone(), &e)
            }
            PipelineError::NoCompatiblePortal => CliError::new("pipeline", e),
        }
    }
}

impl From<DeformError> for CliError {
    fn from(e: DeformError) -> CliError {
        match &e {
            DeformError::PlacementFailure(label) => {
                CliError::with_entity("deform", label.clone(), &e)
            }
            _ => CliError::new("deform", e),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> CliError {
        CliError::new("metrics", e)
    }
}

type CmdResult = Result<(), CliError>;

// ---------------------------------------------------------------------------
// Arguments

#[derive(Parser)]
#[command(name = "roomforge", about = "Floor-plan assembly and room deformation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct OutArg {
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct WeightsArg {
    /// Optional JSON weights file with `score`, `miqp`, and
    /// `correspondence` sections; omitted fields keep their defaults.
    #[arg(long)]
    weights: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Convert raw annotated room records into a canonical room database.
    Ingest {
        /// Raw rooms document (`rawrooms/1`).
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        out: OutArg,
    },
    /// Assemble a floor plan from a relation graph by iterative retrieval
    /// and layout snapping.
    Stitch {
        /// Relation graph document (`relgraph/1`).
        #[arg(long)]
        graph: PathBuf,
        /// Room database document (`roomdb/1`).
        #[arg(long)]
        db: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        beam_width: usize,
        /// Per-insertion solver time limit in seconds.
        #[arg(long, default_value_t = 60.0)]
        time_limit: f64,
        /// Minimal room width/height enforced by the layout solver.
        #[arg(long, default_value_t = 20.0)]
        min_room_size: f64,
        /// Candidate scorer: deterministic portal-shape ranking or the
        /// seeded random baseline.
        #[arg(long, value_enum, default_value_t = ScorerArg::PortalShape)]
        scorer: ScorerArg,
        /// Also write per-step search records to trace.jsonl.
        #[arg(long)]
        trace: bool,
        #[command(flatten)]
        weights: WeightsArg,
        #[command(flatten)]
        out: OutArg,
    },
    /// Retrieve the best database room for every slot of an existing plan.
    Match2d {
        /// Floor plan document (`floorplan/1`).
        #[arg(long)]
        plan: PathBuf,
        /// Room database resolving the plan's room ids.
        #[arg(long)]
        rooms: PathBuf,
        /// Candidate room database.
        #[arg(long)]
        db: PathBuf,
        #[command(flatten)]
        weights: WeightsArg,
        #[command(flatten)]
        out: OutArg,
    },
    /// Deform room meshes onto the plan's outlines and portals.
    Deform {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        rooms: PathBuf,
        /// Assignment from `match2d`; when given, each slot's source room
        /// comes from --db instead of the plan itself.
        #[arg(long)]
        assignment: Option<PathBuf>,
        /// Candidate database backing the assignment's source ids.
        #[arg(long)]
        db: Option<PathBuf>,
        #[command(flatten)]
        weights: WeightsArg,
        #[command(flatten)]
        out: OutArg,
    },
    /// Deform as above and report per-room and aggregate change metrics.
    Metrics {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        rooms: PathBuf,
        #[arg(long)]
        assignment: Option<PathBuf>,
        #[arg(long)]
        db: Option<PathBuf>,
        #[command(flatten)]
        weights: WeightsArg,
        #[command(flatten)]
        out: OutArg,
    },
    /// Render a floor plan as a static SVG.
    Render {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        rooms: PathBuf,
        #[command(flatten)]
        out: OutArg,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum ScorerArg {
    Random,
    PortalShape,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct WeightsFile {
    score: ScoreWeights,
    miqp: MiqpOptions,
    correspondence: roomforge::deform::CorrespondenceWeights,
}

impl WeightsFile {
    fn load(path: &Option<PathBuf>) -> Result<WeightsFile, CliError> {
        match path {
            None => Ok(WeightsFile::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                serde_json::from_str(&text).map_err(CliError::from)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Assignment document

#[derive(Serialize, Deserialize)]
struct AssignmentEntry {
    slot: usize,
    target: String,
    source: String,
    score: MatchScore,
}

#[derive(Serialize, Deserialize)]
struct AssignmentDoc {
    schema: String,
    rooms: Vec<AssignmentEntry>,
}

// ---------------------------------------------------------------------------

fn write_out(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), contents)?;
    Ok(())
}

fn thread_cap() -> usize {
    std::env::var("ROOMFORGE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        })
}

/// Source mesh for a room: the referenced OBJ (resolved next to the
/// database file) or, without a mesh reference, a synthesized shell.
fn source_mesh(room: &Room, base: &Path) -> Result<IndexedMesh, CliError> {
    match &room.mesh_ref {
        Some(rel) => {
            let path = base.join(rel);
            IndexedMesh::load(&path).map_err(CliError::from)
        }
        None => {
            let outline_m = outline_to_meters(&room.outline)?;
            Ok(synth_room_mesh(&outline_m, 2.8, &[]))
        }
    }
}

struct DeformedRoom {
    slot: usize,
    target_id: String,
    src_mesh: IndexedMesh,
    out_mesh: IndexedMesh,
    corr: OutlineCorrespondence,
}

/// Deform every plan slot: source room/mesh per the optional assignment,
/// target geometry from the placed room. Runs rooms in parallel, capped by
/// ROOMFORGE_THREADS; results are ordered by slot regardless of schedule.
fn run_deforms(
    plan: &FloorPlan,
    rooms_base: &Path,
    assignment: &Option<PathBuf>,
    cand_db_path: &Option<PathBuf>,
    w: &roomforge::deform::CorrespondenceWeights,
) -> Result<Vec<DeformedRoom>, CliError> {
    let sources: Vec<(Room, IndexedMesh)> = match assignment {
        None => plan
            .rooms
            .iter()
            .map(|pr| Ok((pr.room.clone(), source_mesh(&pr.room, rooms_base)?)))
            .collect::<Result<_, CliError>>()?,
        Some(path) => {
            let db_path = cand_db_path.as_ref().ok_or_else(|| {
                CliError::new("cli", "--assignment requires --db for source rooms")
            })?;
            let db = RoomDatabase::load(db_path)?;
            let db = if db.is_augmented() { db } else { db.augment_rotations()? };
            let base = db_path.parent().unwrap_or(Path::new(".")).to_path_buf();
            let doc: AssignmentDoc =
                serde_json::from_str(&std::fs::read_to_string(path)?)?;
            if doc.schema != "assignment/1" {
                return Err(CliError::new(
                    "cli",
                    format!("expected schema assignment/1, got {}", doc.schema),
                ));
            }
            let mut by_slot: Vec<Option<String>> = vec![None; plan.rooms.len()];
            for e in &doc.rooms {
                if e.slot >= plan.rooms.len() {
                    return Err(CliError::with_entity(
                        "cli",
                        e.slot.to_string(),
                        "assignment slot out of range",
                    ));
                }
                by_slot[e.slot] = Some(e.source.clone());
            }
            by_slot
                .into_iter()
                .enumerate()
                .map(|(i, id)| {
                    let id = id.ok_or_else(|| {
                        CliError::with_entity(
                            "cli",
                            i.to_string(),
                            "assignment is missing a slot",
                        )
                    })?;
                    let room = db
                        .get(&id)
                        .ok_or_else(|| ModelError::UnknownRoomRef(id.clone()))?
                        .clone();
                    let mesh = source_mesh(&room, &base)?;
                    Ok((room, mesh))
                })
                .collect::<Result<_, CliError>>()?
        }
    };

    let jobs: Vec<usize> = (0..plan.rooms.len()).collect();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<DeformedRoom, CliError>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    let threads = thread_cap().min(jobs.len()).max(1);
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let pr = &plan.rooms[i];
                let (src_room, src_mesh) = &sources[i];
                let res = deform_room(
                    src_room,
                    src_mesh,
                    &pr.room.outline,
                    &pr.room.portals,
                    w,
                )
                .map(|(out_mesh, corr)| DeformedRoom {
                    slot: i,
                    target_id: pr.room.id.clone(),
                    src_mesh: src_mesh.clone(),
                    out_mesh,
                    corr,
                })
                .map_err(CliError::from);
                results.lock().expect("no panics hold the lock")[i] = Some(res);
            });
        }
    });
    results
        .into_inner()
        .expect("all workers joined")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

// ---------------------------------------------------------------------------
// Subcommands

fn cmd_ingest(input: &Path, out: &Path) -> CmdResult {
    let raws = load_raw_rooms(input)?;
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    for raw in &raws {
        match ingest_room(raw) {
            Ok(room) => accepted.push(room),
            Err(e) => rejected.push(json!({"id": raw.id, "reason": e.to_string()})),
        }
    }
    let db = RoomDatabase::new(accepted)?;
    write_out(out, "roomdb.json", &db.to_json()?)?;
    let report = json!({
        "schema": "ingest-report/1",
        "accepted": db.len(),
        "rejected": rejected,
    });
    write_out(out, "ingest_report.json", &canonical_json(&report))?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_stitch(
    graph: &Path,
    db: &Path,
    seed: u64,
    beam_width: usize,
    time_limit: f64,
    min_room_size: f64,
    scorer: ScorerArg,
    trace: bool,
    weights: &Option<PathBuf>,
    out: &Path,
) -> CmdResult {
    let g = RelationGraph::load(graph)?;
    let db = RoomDatabase::load(db)?;
    let wf = WeightsFile::load(weights)?;
    let mut opts = StitchOptions {
        beam_width,
        time_limit_s: time_limit,
        seed,
        miqp: wf.miqp,
        scorer: match scorer {
            ScorerArg::Random => ScorerKind::Random,
            ScorerArg::PortalShape => ScorerKind::PortalShape,
        },
        weights: wf.score,
        ..Default::default()
    };
    opts.miqp.min_room_size = min_room_size;
    let outcome = stitch(&g, &db, &opts)?;
    let (plan_rooms, plan) = outcome.plan.with_embedded_rooms();
    write_out(out, "plan_rooms.json", &plan_rooms.to_json()?)?;
    write_out(out, "floorplan.json", &plan.to_json()?)?;
    let report = plan.validate();
    let summary = json!({
        "schema": "stitch-summary/1",
        "cost": outcome.cost,
        "rooms": plan.rooms.len(),
        "pairings": plan.pairings.len(),
        "violations": report.violations.len(),
    });
    write_out(out, "stitch_summary.json", &canonical_json(&summary))?;
    if trace {
        let mut lines = String::new();
        for rec in &outcome.trace {
            lines.push_str(&to_canonical(rec)?);
        }
        write_out(out, "trace.jsonl", &lines)?;
    }
    Ok(())
}

fn cmd_match2d(
    plan: &Path,
    rooms: &Path,
    db: &Path,
    weights: &Option<PathBuf>,
    out: &Path,
) -> CmdResult {
    let rooms_db = RoomDatabase::load(rooms)?;
    let fp = FloorPlan::load(plan, &rooms_db)?;
    let cand = RoomDatabase::load(db)?;
    let cand = if cand.is_augmented() { cand } else { cand.augment_rotations()? };
    let wf = WeightsFile::load(weights)?;
    let matched = match_layout(&fp, &cand, &wf.score)?;
    let doc = AssignmentDoc {
        schema: "assignment/1".into(),
        rooms: matched
            .into_iter()
            .enumerate()
            .map(|(slot, (source, score))| AssignmentEntry {
                slot,
                target: fp.rooms[slot].room.id.clone(),
                source,
                score,
            })
            .collect(),
    };
    write_out(out, "assignment.json", &to_canonical(&doc)?)?;
    Ok(())
}

fn corr_doc(corr: &OutlineCorrespondence) -> serde_json::Value {
    json!({
        "schema": "correspondence/1",
        "objective": corr.objective,
        "u_s": corr.u_s,
        "u_t": corr.u_t,
        "sigma_s": corr.sigma_s,
        "sigma_t": corr.sigma_t,
        "theta": corr.theta,
        "portals": corr
            .portals
            .iter()
            .map(|p| {
                json!({
                    "src": [p.pair.src.0, p.pair.src.1],
                    "tgt": [p.pair.tgt.0, p.pair.tgt.1],
                    "wall": p.wall,
                })
            })
            .collect::<Vec<_>>(),
    })
}

fn cmd_deform(
    plan: &Path,
    rooms: &Path,
    assignment: &Option<PathBuf>,
    db: &Option<PathBuf>,
    weights: &Option<PathBuf>,
    out: &Path,
) -> CmdResult {
    let rooms_db = RoomDatabase::load(rooms)?;
    let fp = FloorPlan::load(plan, &rooms_db)?;
    let wf = WeightsFile::load(weights)?;
    let base = rooms.parent().unwrap_or(Path::new(".")).to_path_buf();
    let deformed = run_deforms(&fp, &base, assignment, db, &wf.correspondence)?;
    let mut index = Vec::new();
    for d in &deformed {
        let obj_name = format!("room{:03}.obj", d.slot);
        let corr_name = format!("room{:03}.corr.json", d.slot);
        write_out(out, &obj_name, &d.out_mesh.to_obj())?;
        write_out(out, &corr_name, &canonical_json(&corr_doc(&d.corr)))?;
        index.push(json!({
            "slot": d.slot,
            "room": d.target_id,
            "mesh": obj_name,
            "correspondence": corr_name,
        }));
    }
    let summary = json!({"schema": "deform-summary/1", "rooms": index});
    write_out(out, "deform_summary.json", &canonical_json(&summary))?;
    Ok(())
}

fn cmd_metrics(
    plan: &Path,
    rooms: &Path,
    assignment: &Option<PathBuf>,
    db: &Option<PathBuf>,
    weights: &Option<PathBuf>,
    out: &Path,
) -> CmdResult {
    let rooms_db = RoomDatabase::load(rooms)?;
    let fp = FloorPlan::load(plan, &rooms_db)?;
    let wf = WeightsFile::load(weights)?;
    let base = rooms.parent().unwrap_or(Path::new(".")).to_path_buf();
    let deformed = run_deforms(&fp, &base, assignment, db, &wf.correspondence)?;
    let mut rows: Vec<(String, MetricsReport)> = Vec::new();
    let mut reports = Vec::new();
    for d in &deformed {
        let r = metrics::report(&d.corr, &d.src_mesh, &d.out_mesh)?;
        rows.push((d.target_id.clone(), r.clone()));
        reports.push(r);
    }
    let agg = metrics::aggregate(&reports)
        .ok_or_else(|| CliError::new("metrics", "plan has no rooms"))?;
    let doc = json!({
        "schema": "metrics/1",
        "rooms": deformed
            .iter()
            .zip(&reports)
            .map(|(d, r)| json!({"slot": d.slot, "room": d.target_id, "report": r}))
            .collect::<Vec<_>>(),
        "aggregate": agg,
    });
    write_out(out, "metrics.json", &canonical_json(&doc))?;
    rows.push(("aggregate".into(), agg));
    write_out(out, "metrics.csv", &metrics::to_csv(&rows))?;
    Ok(())
}

fn cmd_render(plan: &Path, rooms: &Path, out: &Path) -> CmdResult {
    let rooms_db = RoomDatabase::load(rooms)?;
    let fp = FloorPlan::load(plan, &rooms_db)?;
    write_out(out, "plan.svg", &render_svg(&fp))?;
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Ingest { input, out } => cmd_ingest(&input, &out.out),
        Command::Stitch {
            graph,
            db,
            seed,
            beam_width,
            time_limit,
            min_room_size,
            scorer,
            trace,
            weights,
            out,
        } => cmd_stitch(
            &graph,
            &db,
            seed,
            beam_width,
            time_limit,
            min_room_size,
            scorer,
            trace,
            &weights.weights,
            &out.out,
        ),
        Command::Match2d { plan, rooms, db, weights, out } => {
            cmd_match2d(&plan, &rooms, &db, &weights.weights, &out.out)
        }
        Command::Deform { plan, rooms, assignment, db, weights, out } => {
            cmd_deform(&plan, &rooms, &assignment, &db, &weights.weights, &out.out)
        }
        Command::Metrics { plan, rooms, assignment, db, weights, out } => {
            cmd_metrics(&plan, &rooms, &assignment, &db, &weights.weights, &out.out)
        }
        Command::Render { plan, rooms, out } => cmd_render(&plan, &rooms, &out.out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let doc = json!({
                "error": {
                    "module": e.module,
                    "entity": e.entity,
                    "message": e.message,
                }
            });
            eprint!("{}", canonical_json(&doc));
            ExitCode::FAILURE
        }
    }
}
