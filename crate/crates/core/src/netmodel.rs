//! Network data model, on-disk case format, per-unit conversion and
//! structural validation.
//!
//! A case file is a single JSON document in physical units (kW, kVAr, kVA,
//! siemens). [`load_case`] parses it, checks every structural invariant and
//! returns a per-unit-normalised [`NetworkCase`]; all downstream computation
//! is per-unit.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One of the three phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        match self {
            Phase::A => 0,
            Phase::B => 1,
            Phase::C => 2,
        }
    }

    pub fn from_index(i: usize) -> Phase {
        Phase::ALL[i]
    }

    pub fn letter(self) -> char {
        match self {
            Phase::A => 'a',
            Phase::B => 'b',
            Phase::C => 'c',
        }
    }

    pub fn parse(s: &str) -> Option<Phase> {
        match s {
            "a" | "A" => Some(Phase::A),
            "b" | "B" => Some(Phase::B),
            "c" | "C" => Some(Phase::C),
            _ => None,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// Subset of `{a, b, c}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PhaseSet([bool; 3]);

impl PhaseSet {
    pub fn all() -> PhaseSet {
        PhaseSet([true; 3])
    }

    pub fn single(p: Phase) -> PhaseSet {
        let mut s = PhaseSet::default();
        s.insert(p);
        s
    }

    pub fn insert(&mut self, p: Phase) {
        self.0[p.index()] = true;
    }

    pub fn contains(&self, p: Phase) -> bool {
        self.0[p.index()]
    }

    pub fn is_empty(&self) -> bool {
        !self.0.iter().any(|&b| b)
    }

    pub fn len(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = Phase> + '_ {
        Phase::ALL.into_iter().filter(|p| self.contains(*p))
    }

    pub fn is_subset_of(&self, other: &PhaseSet) -> bool {
        self.iter().all(|p| other.contains(p))
    }
}

/// Per-phase optional quantity (entries only for connected phases).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerPhase {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
}

impl PerPhase {
    pub fn uniform(phases: &PhaseSet, value: f64) -> PerPhase {
        let mut pp = PerPhase::default();
        for p in phases.iter() {
            pp.set(p, value);
        }
        pp
    }

    pub fn get(&self, p: Phase) -> Option<f64> {
        match p {
            Phase::A => self.a,
            Phase::B => self.b,
            Phase::C => self.c,
        }
    }

    pub fn set(&mut self, p: Phase, v: f64) {
        match p {
            Phase::A => self.a = Some(v),
            Phase::B => self.b = Some(v),
            Phase::C => self.c = Some(v),
        }
    }

    pub fn phases(&self) -> PhaseSet {
        let mut s = PhaseSet::default();
        for p in Phase::ALL {
            if self.get(p).is_some() {
                s.insert(p);
            }
        }
        s
    }

    pub fn scale(&self, k: f64) -> PerPhase {
        let mut pp = *self;
        for p in Phase::ALL {
            if let Some(v) = pp.get(p) {
                pp.set(p, v * k);
            }
        }
        pp
    }
}

/// 3×3 complex series admittance; absent-phase rows/columns are zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YMatrix(pub [[Complex64; 3]; 3]);

impl YMatrix {
    pub fn zero() -> YMatrix {
        YMatrix([[Complex64::new(0.0, 0.0); 3]; 3])
    }

    /// Diagonal matrix with the same admittance per phase.
    pub fn diagonal(y: Complex64) -> YMatrix {
        let mut m = YMatrix::zero();
        for i in 0..3 {
            m.0[i][i] = y;
        }
        m
    }

    pub fn get(&self, row: Phase, col: Phase) -> Complex64 {
        self.0[row.index()][col.index()]
    }

    pub fn scale(&self, k: f64) -> YMatrix {
        let mut m = *self;
        for row in &mut m.0 {
            for v in row.iter_mut() {
                *v *= k;
            }
        }
        m
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        for i in 0..3 {
            for j in (i + 1)..3 {
                if (self.0[i][j] - self.0[j][i]).norm() > tol {
                    return false;
                }
            }
        }
        true
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().flatten().all(|v| v.norm() == 0.0)
    }
}

/// Which unit system a [`NetworkCase`]'s quantities are expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitSystem {
    /// kW / kVAr / kVA and siemens.
    Physical,
    /// Everything normalised by `base_mva` / base impedance.
    PerUnit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: String,
    pub phases: PhaseSet,
    pub v_min: f64,
    pub v_max: f64,
    pub is_reference: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub from: String,
    pub to: String,
    pub y_series: YMatrix,
    /// Per-phase apparent-power rating; `None` means unlimited.
    pub s_max: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Load {
    pub bus: String,
    pub p: PerPhase,
    pub q: PerPhase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub bus: String,
    pub p_min: PerPhase,
    pub p_max: PerPhase,
    pub q_min: PerPhase,
    pub q_max: PerPhase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlexUnit {
    pub id: String,
    pub bus: String,
    pub phases: PhaseSet,
    pub p_min: PerPhase,
    pub p_max: PerPhase,
    pub q_min: PerPhase,
    pub q_max: PerPhase,
    /// Outputs tied equal across the unit's phases.
    pub balanced: bool,
}

/// Immutable three-phase network case.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkCase {
    pub base_mva: f64,
    pub base_kv: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub loads: Vec<Load>,
    pub generators: Vec<Generator>,
    pub flex_units: Vec<FlexUnit>,
    pub vu_monitored: Vec<String>,
    pub unit_system: UnitSystem,
}

impl NetworkCase {
    /// Base impedance in ohms.
    pub fn z_base(&self) -> f64 {
        self.base_kv * self.base_kv / self.base_mva
    }

    pub fn reference_bus(&self) -> Option<&Bus> {
        self.buses.iter().find(|b| b.is_reference)
    }

    pub fn bus(&self, id: &str) -> Option<&Bus> {
        self.buses.iter().find(|b| b.id == id)
    }
}

// ---------------------------------------------------------------------------
// On-disk format
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCase {
    base_mva: f64,
    base_kv: f64,
    buses: Vec<RawBus>,
    #[serde(default)]
    lines: Vec<RawLine>,
    #[serde(default)]
    loads: Vec<RawLoad>,
    #[serde(default)]
    generators: Vec<RawGenerator>,
    #[serde(default)]
    flex_units: Vec<RawFlexUnit>,
    #[serde(default)]
    vu_monitored: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBus {
    id: String,
    phases: Vec<String>,
    v_min: f64,
    v_max: f64,
    #[serde(default)]
    is_reference: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLine {
    from: String,
    to: String,
    /// 3×3 array of `[re, im]` entries.
    y_series: [[[f64; 2]; 3]; 3],
    #[serde(default = "default_units")]
    units: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    s_max_kva: Option<[f64; 3]>,
}

fn default_units() -> String {
    "siemens".to_string()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLoad {
    bus: String,
    p_kw: PerPhase,
    q_kvar: PerPhase,
}

/// A per-unit-of-equipment bound: one scalar applied to every connected
/// phase, or an explicit per-phase map.
#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum RawBound {
    Scalar(f64),
    PerPhase(PerPhase),
}

impl RawBound {
    fn resolve(&self, phases: &PhaseSet) -> PerPhase {
        match self {
            RawBound::Scalar(v) => PerPhase::uniform(phases, *v),
            RawBound::PerPhase(pp) => *pp,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGenerator {
    bus: String,
    phases: Vec<String>,
    p_min_kw: RawBound,
    p_max_kw: RawBound,
    q_min_kvar: RawBound,
    q_max_kvar: RawBound,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFlexUnit {
    id: String,
    bus: String,
    phases: Vec<String>,
    p_min_kw: RawBound,
    p_max_kw: RawBound,
    q_min_kvar: RawBound,
    q_max_kvar: RawBound,
    balanced: bool,
}

fn parse_phases(list: &[String], referrer: &str) -> Result<PhaseSet> {
    let mut set = PhaseSet::default();
    for s in list {
        let p = Phase::parse(s).ok_or_else(|| {
            Error::Validation(Violation::BadPhaseName {
                referrer: referrer.to_string(),
                name: s.clone(),
            })
        })?;
        set.insert(p);
    }
    Ok(set)
}

fn from_raw(raw: RawCase) -> Result<NetworkCase> {
    if raw.base_mva <= 0.0 || raw.base_kv <= 0.0 {
        return Err(Error::NonPositiveBase {
            base_mva: raw.base_mva,
            base_kv: raw.base_kv,
        });
    }
    let z_base = raw.base_kv * raw.base_kv / raw.base_mva;

    let buses = raw
        .buses
        .into_iter()
        .map(|b| {
            Ok(Bus {
                phases: parse_phases(&b.phases, &b.id)?,
                id: b.id,
                v_min: b.v_min,
                v_max: b.v_max,
                is_reference: b.is_reference,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let lines = raw
        .lines
        .into_iter()
        .map(|l| {
            let mut y = YMatrix::zero();
            for i in 0..3 {
                for j in 0..3 {
                    y.0[i][j] = Complex64::new(l.y_series[i][j][0], l.y_series[i][j][1]);
                }
            }
            // Per-unit-tagged admittances are converted back to siemens so the
            // whole case is uniformly physical before normalisation.
            let y = match l.units.as_str() {
                "siemens" => y,
                "per_unit" => y.scale(1.0 / z_base),
                other => {
                    return Err(Error::Validation(Violation::BadUnitsTag {
                        from: l.from.clone(),
                        to: l.to.clone(),
                        tag: other.to_string(),
                    }))
                }
            };
            Ok(Line {
                from: l.from,
                to: l.to,
                y_series: y,
                s_max: l.s_max_kva,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let loads = raw
        .loads
        .into_iter()
        .map(|l| Load {
            bus: l.bus,
            p: l.p_kw,
            q: l.q_kvar,
        })
        .collect();

    let generators = raw
        .generators
        .into_iter()
        .map(|g| {
            let phases = parse_phases(&g.phases, &g.bus)?;
            Ok(Generator {
                p_min: g.p_min_kw.resolve(&phases),
                p_max: g.p_max_kw.resolve(&phases),
                q_min: g.q_min_kvar.resolve(&phases),
                q_max: g.q_max_kvar.resolve(&phases),
                bus: g.bus,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let flex_units = raw
        .flex_units
        .into_iter()
        .map(|f| {
            let phases = parse_phases(&f.phases, &f.id)?;
            Ok(FlexUnit {
                p_min: f.p_min_kw.resolve(&phases),
                p_max: f.p_max_kw.resolve(&phases),
                q_min: f.q_min_kvar.resolve(&phases),
                q_max: f.q_max_kvar.resolve(&phases),
                id: f.id,
                bus: f.bus,
                phases,
                balanced: f.balanced,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(NetworkCase {
        base_mva: raw.base_mva,
        base_kv: raw.base_kv,
        buses,
        lines,
        loads,
        generators,
        flex_units,
        vu_monitored: raw.vu_monitored,
        unit_system: UnitSystem::Physical,
    })
}

/// Loads, validates and per-unit-normalises a case file.
pub fn load_case<P: AsRef<Path>>(path: P) -> Result<NetworkCase> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_case_str(&text)
}

/// Same as [`load_case`] but from an in-memory JSON document.
pub fn load_case_str(text: &str) -> Result<NetworkCase> {
    let raw: RawCase = serde_json::from_str(text)?;
    let case = from_raw(raw)?;
    if let Some(v) = validate(&case).into_iter().next() {
        return Err(Error::Validation(v));
    }
    to_per_unit(&case)
}

// ---------------------------------------------------------------------------
// Per-unit conversion
// ---------------------------------------------------------------------------

/// Converts a physical-unit case to per-unit.
pub fn to_per_unit(case: &NetworkCase) -> Result<NetworkCase> {
    convert(case, UnitSystem::Physical, UnitSystem::PerUnit)
}

/// Converts a per-unit case back to physical units.
pub fn from_per_unit(case: &NetworkCase) -> Result<NetworkCase> {
    convert(case, UnitSystem::PerUnit, UnitSystem::Physical)
}

fn convert(case: &NetworkCase, from: UnitSystem, to: UnitSystem) -> Result<NetworkCase> {
    assert_eq!(case.unit_system, from, "case is not in the expected units");
    if case.base_mva <= 0.0 || case.base_kv <= 0.0 {
        return Err(Error::NonPositiveBase {
            base_mva: case.base_mva,
            base_kv: case.base_kv,
        });
    }
    // kW -> p.u. multiplies by this; siemens -> p.u. multiplies by z_base.
    let s_scale = match to {
        UnitSystem::PerUnit => 1e-3 / case.base_mva,
        UnitSystem::Physical => 1e3 * case.base_mva,
    };
    let y_scale = match to {
        UnitSystem::PerUnit => case.z_base(),
        UnitSystem::Physical => 1.0 / case.z_base(),
    };
    let mut out = case.clone();
    out.unit_system = to;
    for line in &mut out.lines {
        line.y_series = line.y_series.scale(y_scale);
        if let Some(s_max) = &mut line.s_max {
            for v in s_max.iter_mut() {
                *v *= s_scale;
            }
        }
    }
    for load in &mut out.loads {
        load.p = load.p.scale(s_scale);
        load.q = load.q.scale(s_scale);
    }
    for g in &mut out.generators {
        g.p_min = g.p_min.scale(s_scale);
        g.p_max = g.p_max.scale(s_scale);
        g.q_min = g.q_min.scale(s_scale);
        g.q_max = g.q_max.scale(s_scale);
    }
    for f in &mut out.flex_units {
        f.p_min = f.p_min.scale(s_scale);
        f.p_max = f.p_max.scale(s_scale);
        f.q_min = f.q_min.scale(s_scale);
        f.q_max = f.q_max.scale(s_scale);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// One violated structural invariant. Violations are data, not exceptions:
/// [`validate`] returns all of them.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoReferenceBus,
    MultipleReferenceBuses { count: usize },
    DuplicateBusId { id: String },
    DuplicateFlexId { id: String },
    NoPhases { bus: String },
    BadVoltageBounds { bus: String, v_min: f64, v_max: f64 },
    BadPhaseName { referrer: String, name: String },
    BadUnitsTag { from: String, to: String, tag: String },
    UnknownBus { referrer: String, bus: String },
    SelfLoop { bus: String },
    AsymmetricAdmittance { from: String, to: String },
    NegativeRating { from: String, to: String },
    PhaseNotAtBus { referrer: String, bus: String, phase: Phase },
    GeneratorBoundsInverted { bus: String, phase: Phase },
    FlexBoundsInverted { id: String, phase: Phase },
    ZeroOutputInfeasible { id: String, phase: Phase },
    UnbalancedTies { id: String },
    Disconnected { bus: String },
    MonitoredBusMissingPhases { bus: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            NoReferenceBus => write!(f, "no reference bus"),
            MultipleReferenceBuses { count } => {
                write!(f, "{count} reference buses, expected exactly one")
            }
            DuplicateBusId { id } => write!(f, "duplicate bus id \"{id}\""),
            DuplicateFlexId { id } => write!(f, "duplicate flex unit id \"{id}\""),
            NoPhases { bus } => write!(f, "bus \"{bus}\" has no phases"),
            BadVoltageBounds { bus, v_min, v_max } => {
                write!(f, "bus \"{bus}\" voltage bounds invalid: {v_min} .. {v_max}")
            }
            BadPhaseName { referrer, name } => {
                write!(f, "\"{referrer}\": unknown phase \"{name}\"")
            }
            BadUnitsTag { from, to, tag } => {
                write!(f, "line {from}-{to}: unknown units tag \"{tag}\"")
            }
            UnknownBus { referrer, bus } => {
                write!(f, "\"{referrer}\" references absent bus \"{bus}\"")
            }
            SelfLoop { bus } => write!(f, "line from bus \"{bus}\" to itself"),
            AsymmetricAdmittance { from, to } => {
                write!(f, "line {from}-{to}: series admittance not symmetric")
            }
            NegativeRating { from, to } => {
                write!(f, "line {from}-{to}: negative apparent-power rating")
            }
            PhaseNotAtBus { referrer, bus, phase } => {
                write!(f, "\"{referrer}\": phase {phase} not present at bus \"{bus}\"")
            }
            GeneratorBoundsInverted { bus, phase } => {
                write!(f, "generator at \"{bus}\": inverted bounds on phase {phase}")
            }
            FlexBoundsInverted { id, phase } => {
                write!(f, "flex unit \"{id}\": inverted bounds on phase {phase}")
            }
            ZeroOutputInfeasible { id, phase } => {
                write!(f, "flex unit \"{id}\": zero output infeasible on phase {phase}")
            }
            UnbalancedTies { id } => {
                write!(f, "flex unit \"{id}\": balanced but bounds differ across phases")
            }
            Disconnected { bus } => {
                write!(f, "bus \"{bus}\" not reachable from the reference bus")
            }
            MonitoredBusMissingPhases { bus } => {
                write!(f, "monitored bus \"{bus}\" does not carry all three phases")
            }
        }
    }
}

/// Checks every type invariant and returns one entry per violation.
pub fn validate(case: &NetworkCase) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut bus_idx: HashMap<&str, usize> = HashMap::new();
    for (i, b) in case.buses.iter().enumerate() {
        if bus_idx.insert(b.id.as_str(), i).is_some() {
            out.push(Violation::DuplicateBusId { id: b.id.clone() });
        }
        if b.phases.is_empty() {
            out.push(Violation::NoPhases { bus: b.id.clone() });
        }
        if !(b.v_min > 0.0 && b.v_min < b.v_max) {
            out.push(Violation::BadVoltageBounds {
                bus: b.id.clone(),
                v_min: b.v_min,
                v_max: b.v_max,
            });
        }
    }

    let n_ref = case.buses.iter().filter(|b| b.is_reference).count();
    match n_ref {
        0 => out.push(Violation::NoReferenceBus),
        1 => {}
        count => out.push(Violation::MultipleReferenceBuses { count }),
    }

    for l in &case.lines {
        let name = format!("line {}-{}", l.from, l.to);
        for end in [&l.from, &l.to] {
            if !bus_idx.contains_key(end.as_str()) {
                out.push(Violation::UnknownBus {
                    referrer: name.clone(),
                    bus: end.clone(),
                });
            }
        }
        if l.from == l.to {
            out.push(Violation::SelfLoop { bus: l.from.clone() });
        }
        if !l.y_series.is_symmetric(1e-9) {
            out.push(Violation::AsymmetricAdmittance {
                from: l.from.clone(),
                to: l.to.clone(),
            });
        }
        if let Some(s_max) = &l.s_max {
            if s_max.iter().any(|&s| s < 0.0) {
                out.push(Violation::NegativeRating {
                    from: l.from.clone(),
                    to: l.to.clone(),
                });
            }
        }
    }

    let phase_check = |out: &mut Vec<Violation>, referrer: &str, bus: &str, used: PhaseSet| {
        if let Some(&bi) = bus_idx.get(bus) {
            for p in used.iter() {
                if !case.buses[bi].phases.contains(p) {
                    out.push(Violation::PhaseNotAtBus {
                        referrer: referrer.to_string(),
                        bus: bus.to_string(),
                        phase: p,
                    });
                }
            }
        } else {
            out.push(Violation::UnknownBus {
                referrer: referrer.to_string(),
                bus: bus.to_string(),
            });
        }
    };

    for l in &case.loads {
        let name = format!("load at {}", l.bus);
        let mut used = l.p.phases();
        for p in l.q.phases().iter() {
            used.insert(p);
        }
        phase_check(&mut out, &name, &l.bus, used);
    }

    for g in &case.generators {
        let name = format!("generator at {}", g.bus);
        phase_check(&mut out, &name, &g.bus, g.p_min.phases());
        for p in g.p_min.phases().iter() {
            let ok_p = g.p_min.get(p).unwrap_or(0.0) <= g.p_max.get(p).unwrap_or(0.0);
            let ok_q = g.q_min.get(p).unwrap_or(0.0) <= g.q_max.get(p).unwrap_or(0.0);
            if !(ok_p && ok_q) {
                out.push(Violation::GeneratorBoundsInverted {
                    bus: g.bus.clone(),
                    phase: p,
                });
            }
        }
    }

    let mut flex_ids: HashMap<&str, ()> = HashMap::new();
    for u in &case.flex_units {
        if flex_ids.insert(u.id.as_str(), ()).is_some() {
            out.push(Violation::DuplicateFlexId { id: u.id.clone() });
        }
        phase_check(&mut out, &u.id, &u.bus, u.phases);
        for p in u.phases.iter() {
            let (p_min, p_max) = (u.p_min.get(p).unwrap_or(0.0), u.p_max.get(p).unwrap_or(0.0));
            let (q_min, q_max) = (u.q_min.get(p).unwrap_or(0.0), u.q_max.get(p).unwrap_or(0.0));
            if p_min > p_max || q_min > q_max {
                out.push(Violation::FlexBoundsInverted {
                    id: u.id.clone(),
                    phase: p,
                });
            } else if p_min > 0.0 || p_max < 0.0 || q_min > 0.0 || q_max < 0.0 {
                out.push(Violation::ZeroOutputInfeasible {
                    id: u.id.clone(),
                    phase: p,
                });
            }
        }
        if u.balanced {
            let phases: Vec<Phase> = u.phases.iter().collect();
            if let Some(&first) = phases.first() {
                let same = |pp: &PerPhase, p: Phase| pp.get(p) == pp.get(first);
                if !phases.iter().skip(1).all(|&p| {
                    same(&u.p_min, p) && same(&u.p_max, p) && same(&u.q_min, p) && same(&u.q_max, p)
                }) {
                    out.push(Violation::UnbalancedTies { id: u.id.clone() });
                }
            }
        }
    }

    // Connectivity from the reference bus over lines, any phase.
    if n_ref == 1 {
        let ref_i = case.buses.iter().position(|b| b.is_reference).unwrap();
        let mut reached = vec![false; case.buses.len()];
        let mut stack = vec![ref_i];
        reached[ref_i] = true;
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); case.buses.len()];
        for l in &case.lines {
            if let (Some(&a), Some(&b)) = (bus_idx.get(l.from.as_str()), bus_idx.get(l.to.as_str()))
            {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        while let Some(i) = stack.pop() {
            for &j in &adj[i] {
                if !reached[j] {
                    reached[j] = true;
                    stack.push(j);
                }
            }
        }
        for (i, b) in case.buses.iter().enumerate() {
            if !reached[i] {
                out.push(Violation::Disconnected { bus: b.id.clone() });
            }
        }
    }

    for id in &case.vu_monitored {
        match bus_idx.get(id.as_str()) {
            Some(&bi) => {
                if case.buses[bi].phases.len() != 3 {
                    out.push(Violation::MonitoredBusMissingPhases { bus: id.clone() });
                }
            }
            None => out.push(Violation::UnknownBus {
                referrer: "vu_monitored".to_string(),
                bus: id.clone(),
            }),
        }
    }

    out
}

// ---------------------------------------------------------------------------
// Indexing
// ---------------------------------------------------------------------------

/// A (bus, phase) node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Node {
    pub bus: usize,
    pub phase: Phase,
}

/// A line with endpoints resolved to bus indices.
#[derive(Debug, Clone, Copy)]
pub struct ResolvedLine {
    pub line: usize,
    pub from: usize,
    pub to: usize,
}

/// Precomputed index maps over a validated case: contiguous node numbering,
/// bus id lookup and line incidence. Shared read-only by the power flow,
/// the OPF builder and the oracle.
#[derive(Debug, Clone)]
pub struct NetworkIndex {
    bus_of_id: HashMap<String, usize>,
    nodes: Vec<Node>,
    node_of: Vec<[Option<usize>; 3]>,
    ref_bus: usize,
    lines: Vec<ResolvedLine>,
    /// Per bus: (resolved line index, true if this bus is the `from` end).
    incident: Vec<Vec<(usize, bool)>>,
    monitored: Vec<usize>,
}

impl NetworkIndex {
    /// Builds the index. The case must already be valid.
    pub fn new(case: &NetworkCase) -> NetworkIndex {
        let bus_of_id: HashMap<String, usize> = case
            .buses
            .iter()
            .enumerate()
            .map(|(i, b)| (b.id.clone(), i))
            .collect();
        let mut nodes = Vec::new();
        let mut node_of = vec![[None; 3]; case.buses.len()];
        for (bi, b) in case.buses.iter().enumerate() {
            for p in b.phases.iter() {
                node_of[bi][p.index()] = Some(nodes.len());
                nodes.push(Node { bus: bi, phase: p });
            }
        }
        let ref_bus = case
            .buses
            .iter()
            .position(|b| b.is_reference)
            .expect("validated case has a reference bus");
        let mut incident: Vec<Vec<(usize, bool)>> = vec![Vec::new(); case.buses.len()];
        let lines: Vec<ResolvedLine> = case
            .lines
            .iter()
            .enumerate()
            .map(|(li, l)| ResolvedLine {
                line: li,
                from: bus_of_id[&l.from],
                to: bus_of_id[&l.to],
            })
            .collect();
        for (ri, rl) in lines.iter().enumerate() {
            incident[rl.from].push((ri, true));
            incident[rl.to].push((ri, false));
        }
        let monitored = case
            .vu_monitored
            .iter()
            .map(|id| bus_of_id[id])
            .collect();
        NetworkIndex {
            bus_of_id,
            nodes,
            node_of,
            ref_bus,
            lines,
            incident,
            monitored,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, bus: usize, phase: Phase) -> Option<usize> {
        self.node_of[bus][phase.index()]
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.bus_of_id.get(id).copied()
    }

    pub fn ref_bus(&self) -> usize {
        self.ref_bus
    }

    pub fn resolved_lines(&self) -> &[ResolvedLine] {
        &self.lines
    }

    pub fn incident(&self, bus: usize) -> &[(usize, bool)] {
        &self.incident[bus]
    }

    pub fn monitored(&self) -> &[usize] {
        &self.monitored
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn fixture_path(name: &str) -> std::path::PathBuf {
        std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../cases")
            .join(name)
    }

    #[test]
    fn five_bus_fixture_loads() {
        let case = load_case(fixture_path("case5_bal_balflex.json")).unwrap();
        assert_eq!(case.buses.len(), 5);
        assert_eq!(case.loads.len(), 4);
        assert_eq!(case.flex_units.len(), 1);
        assert_eq!(case.unit_system, UnitSystem::PerUnit);
    }

    #[test]
    fn empty_case_has_no_reference_bus() {
        let text = r#"{"base_mva": 1.0, "base_kv": 0.4, "buses": []}"#;
        let err = load_case_str(text).unwrap_err();
        match err {
            Error::Validation(Violation::NoReferenceBus) => {}
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = r#"{"base_mva": 1.0, "base_kv": 0.4, "buses": [], "surprise": 1}"#;
        assert!(matches!(load_case_str(text), Err(Error::Parse(_))));
    }

    #[test]
    fn dangling_line_endpoint_named_in_violation() {
        let mut case = tiny_case();
        case.lines.push(Line {
            from: "1".into(),
            to: "99".into(),
            y_series: YMatrix::diagonal(Complex64::new(1.0, -1.0)),
            s_max: None,
        });
        let violations = validate(&case);
        assert_eq!(violations.len(), 1);
        assert!(violations[0].to_string().contains("\"99\""));
    }

    #[test]
    fn positive_p_min_flags_zero_output_infeasible() {
        let mut case = tiny_case();
        let phases = PhaseSet::all();
        case.flex_units.push(FlexUnit {
            id: "f1".into(),
            bus: "2".into(),
            phases,
            p_min: PerPhase::uniform(&phases, 1.0),
            p_max: PerPhase::uniform(&phases, 8.0),
            q_min: PerPhase::uniform(&phases, -8.0),
            q_max: PerPhase::uniform(&phases, 8.0),
            balanced: false,
        });
        let violations = validate(&case);
        assert!(violations
            .iter()
            .any(|v| matches!(v, Violation::ZeroOutputInfeasible { id, .. } if id == "f1")));
    }

    #[test]
    fn per_unit_round_trip_is_identity() {
        let case = {
            let text =
                std::fs::read_to_string(fixture_path("case5_unbal_3x1ph.json")).unwrap();
            let raw: RawCase = serde_json::from_str(&text).unwrap();
            from_raw(raw).unwrap()
        };
        let back = from_per_unit(&to_per_unit(&case).unwrap()).unwrap();
        assert_eq!(case.buses, back.buses);
        for (a, b) in case.lines.iter().zip(&back.lines) {
            for i in 0..3 {
                for j in 0..3 {
                    let (ya, yb) = (a.y_series.0[i][j], b.y_series.0[i][j]);
                    assert!((ya - yb).norm() <= 1e-12 * ya.norm().max(1.0));
                }
            }
        }
        for (a, b) in case.loads.iter().zip(&back.loads) {
            for p in Phase::ALL {
                let (pa, pb) = (a.p.get(p), b.p.get(p));
                match (pa, pb) {
                    (Some(x), Some(y)) => assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0)),
                    (None, None) => {}
                    _ => panic!("phase presence changed"),
                }
            }
        }
    }

    #[test]
    fn per_unit_scaling_examples() {
        // 5 kW on a 1 MVA base.
        let mut case = tiny_case();
        case.loads.push(Load {
            bus: "2".into(),
            p: PerPhase::uniform(&PhaseSet::single(Phase::A), 5.0),
            q: PerPhase::uniform(&PhaseSet::single(Phase::A), 0.0),
        });
        let pu = to_per_unit(&case).unwrap();
        assert!((pu.loads[0].p.get(Phase::A).unwrap() - 0.005).abs() < 1e-15);

        // y = 1/(R + jX) with R = X = z_base gives 0.5 - 0.5j p.u.
        let z_base = case.z_base();
        let z = Complex64::new(z_base, z_base);
        let y = z.inv();
        case.lines[0].y_series = YMatrix::diagonal(y);
        let pu = to_per_unit(&case).unwrap();
        let y_pu = pu.lines[0].y_series.get(Phase::A, Phase::A);
        assert!((y_pu - Complex64::new(0.5, -0.5)).norm() < 1e-12);
    }

    #[test]
    fn zero_base_is_an_error() {
        let mut case = tiny_case();
        case.base_mva = 0.0;
        assert!(matches!(
            to_per_unit(&case),
            Err(Error::NonPositiveBase { .. })
        ));
    }

    fn tiny_case() -> NetworkCase {
        NetworkCase {
            base_mva: 1.0,
            base_kv: 0.4,
            buses: vec![
                Bus {
                    id: "1".into(),
                    phases: PhaseSet::all(),
                    v_min: 0.9,
                    v_max: 1.1,
                    is_reference: true,
                },
                Bus {
                    id: "2".into(),
                    phases: PhaseSet::all(),
                    v_min: 0.9,
                    v_max: 1.1,
                    is_reference: false,
                },
            ],
            lines: vec![Line {
                from: "1".into(),
                to: "2".into(),
                y_series: YMatrix::diagonal(Complex64::new(10.0, -100.0)),
                s_max: None,
            }],
            loads: Vec::new(),
            generators: Vec::new(),
            flex_units: Vec::new(),
            vu_monitored: Vec::new(),
            unit_system: UnitSystem::Physical,
        }
    }
}
