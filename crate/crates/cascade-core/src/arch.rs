//! Architecture model: tile grid, routing-resource graph, and delay library.
//!
//! A device is a `rows x cols` grid of tiles (PE, MEM, or IO). Every tile has
//! a switch box with `tracks16` 16-bit and `tracks1` 1-bit tracks per side and
//! a connection box that taps arriving tracks into the tile's input ports.
//! The switch-box topology is disjoint: track `i` on one side connects only to
//! track `i` on the other three sides, so a route never changes track index
//! between its source and its sink. When `sb_register_sites` is set, every
//! switch-box output carries one optional pipelining register.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ArchError {
    #[error("architecture file: {0}")]
    Parse(String),
    #[error("invalid architecture: {0}")]
    Invalid(String),
    #[error("delay library: {0}")]
    Delay(String),
    #[error("delay library misses {missing} path classes, first: {first}")]
    Coverage { missing: usize, first: String },
}

/// What a grid position contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TileKind {
    #[serde(rename = "PE")]
    Pe,
    #[serde(rename = "MEM")]
    Mem,
    #[serde(rename = "IO")]
    Io,
}

impl TileKind {
    pub fn name(self) -> &'static str {
        match self {
            TileKind::Pe => "PE",
            TileKind::Mem => "MEM",
            TileKind::Io => "IO",
        }
    }

    pub fn from_name(s: &str) -> Option<TileKind> {
        match s {
            "PE" => Some(TileKind::Pe),
            "MEM" => Some(TileKind::Mem),
            "IO" => Some(TileKind::Io),
            _ => None,
        }
    }

    fn from_letter(c: char) -> Option<TileKind> {
        match c {
            'P' => Some(TileKind::Pe),
            'M' => Some(TileKind::Mem),
            'I' => Some(TileKind::Io),
            _ => None,
        }
    }

    fn letter(self) -> char {
        match self {
            TileKind::Pe => 'P',
            TileKind::Mem => 'M',
            TileKind::Io => 'I',
        }
    }
}

/// Tile side, also used as a routing direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Side {
    North,
    East,
    South,
    West,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::North, Side::East, Side::South, Side::West];

    pub fn opposite(self) -> Side {
        match self {
            Side::North => Side::South,
            Side::East => Side::West,
            Side::South => Side::North,
            Side::West => Side::East,
        }
    }

    /// Row/col delta of the tile beyond this side.
    pub fn delta(self) -> (i32, i32) {
        match self {
            Side::North => (-1, 0),
            Side::East => (0, 1),
            Side::South => (1, 0),
            Side::West => (0, -1),
        }
    }

    pub fn letter(self) -> &'static str {
        match self {
            Side::North => "N",
            Side::East => "E",
            Side::South => "S",
            Side::West => "W",
        }
    }

    pub fn from_letter(s: &str) -> Option<Side> {
        match s {
            "N" => Some(Side::North),
            "E" => Some(Side::East),
            "S" => Some(Side::South),
            "W" => Some(Side::West),
            _ => None,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.letter())
    }
}

impl Serialize for Side {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.letter())
    }
}

impl<'de> Deserialize<'de> for Side {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Side::from_letter(&s).ok_or_else(|| D::Error::custom(format!("unknown side {s:?}")))
    }
}

/// Track width class. Data rides 16-bit tracks; control and handshake ride
/// 1-bit tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Width {
    W16,
    W1,
}

impl Width {
    pub const ALL: [Width; 2] = [Width::W16, Width::W1];

    pub fn bits(self) -> u8 {
        match self {
            Width::W16 => 16,
            Width::W1 => 1,
        }
    }

    pub fn from_bits(bits: u64) -> Option<Width> {
        match bits {
            16 => Some(Width::W16),
            1 => Some(Width::W1),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Width::W16 => "16",
            Width::W1 => "1",
        }
    }
}

impl fmt::Display for Width {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl Serialize for Width {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.bits())
    }
}

impl<'de> Deserialize<'de> for Width {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = u64::deserialize(d)?;
        Width::from_bits(v).ok_or_else(|| D::Error::custom(format!("width must be 16 or 1, got {v}")))
    }
}

/// Grid position, row 0 at the top. Serialized as `"row,col"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Coord {
    pub row: u16,
    pub col: u16,
}

impl Coord {
    pub fn new(row: u16, col: u16) -> Coord {
        Coord { row, col }
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.row, self.col)
    }
}

impl FromStr for Coord {
    type Err = String;

    fn from_str(s: &str) -> Result<Coord, String> {
        let (r, c) = s
            .split_once(',')
            .ok_or_else(|| format!("coordinate {s:?} is not \"row,col\""))?;
        let row = r.trim().parse().map_err(|_| format!("bad row in {s:?}"))?;
        let col = c.trim().parse().map_err(|_| format!("bad col in {s:?}"))?;
        Ok(Coord { row, col })
    }
}

impl Serialize for Coord {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Coord {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(D::Error::custom)
    }
}

/// Static description of one device.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchSpec {
    pub rows: u16,
    pub cols: u16,
    /// Tile kind per grid position. Validation reports positions the map
    /// does not cover.
    pub tiles: BTreeMap<Coord, TileKind>,
    pub tracks16: u8,
    pub tracks1: u8,
    /// Every switch-box output carries one optional pipelining register.
    pub sb_register_sites: bool,
    /// Register ranks available at each PE input (the passes use one).
    pub pe_input_registers: u8,
    /// Register-file depth a SHIFT node may occupy on a PE tile.
    pub regfile_depth: u16,
    /// Net names distributed by dedicated wiring instead of the interconnect.
    pub hardened_nets: BTreeSet<String>,
    /// Rows allowed to contain IO tiles.
    pub io_rows: BTreeSet<u16>,
}

impl ArchSpec {
    pub fn tile_kind(&self, at: Coord) -> Option<TileKind> {
        self.tiles.get(&at).copied()
    }

    pub fn in_bounds(&self, at: Coord) -> bool {
        at.row < self.rows && at.col < self.cols
    }

    pub fn coords(&self) -> impl Iterator<Item = Coord> + '_ {
        (0..self.rows).flat_map(move |r| (0..self.cols).map(move |c| Coord::new(r, c)))
    }

    pub fn tiles_of_kind(&self, kind: TileKind) -> Vec<Coord> {
        self.coords()
            .filter(|c| self.tile_kind(*c) == Some(kind))
            .collect()
    }

    pub fn neighbor(&self, at: Coord, side: Side) -> Option<Coord> {
        let (dr, dc) = side.delta();
        let row = at.row as i32 + dr;
        let col = at.col as i32 + dc;
        if row < 0 || col < 0 || row >= self.rows as i32 || col >= self.cols as i32 {
            None
        } else {
            Some(Coord::new(row as u16, col as u16))
        }
    }

    pub fn tracks(&self, width: Width) -> u8 {
        match width {
            Width::W16 => self.tracks16,
            Width::W1 => self.tracks1,
        }
    }

    /// Tile kinds that occur in the grid, in enum order.
    pub fn kinds_present(&self) -> Vec<TileKind> {
        let set: BTreeSet<TileKind> = self.tiles.values().copied().collect();
        set.into_iter().collect()
    }
}

/// Checks grid invariants. Returns an empty list when the spec is usable.
pub fn validate_arch(spec: &ArchSpec) -> Vec<String> {
    let mut v = Vec::new();
    if spec.rows == 0 {
        v.push("rows must be >= 1".to_string());
    }
    if spec.cols == 0 {
        v.push("cols must be >= 1".to_string());
    }
    if spec.tracks16 == 0 {
        v.push("tracks16 must be >= 1".to_string());
    }
    if spec.tracks1 == 0 {
        v.push("tracks1 must be >= 1".to_string());
    }
    for at in spec.coords() {
        match spec.tile_kind(at) {
            None => v.push(format!("tile_kind missing for ({},{})", at.row, at.col)),
            Some(TileKind::Io) if !spec.io_rows.contains(&at.row) => {
                v.push(format!("IO tile at ({},{}) outside io_rows", at.row, at.col))
            }
            Some(_) => {}
        }
    }
    for at in spec.tiles.keys() {
        if !spec.in_bounds(*at) {
            v.push(format!("tile_kind entry ({},{}) out of range", at.row, at.col));
        }
    }
    for row in &spec.io_rows {
        if *row >= spec.rows && spec.rows > 0 {
            v.push(format!("io_rows entry {row} out of range"));
        }
    }
    v
}

/// One delay class the library must price.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PathClass {
    /// Traversal of one tile's switch box: enter at `entry`, leave at `exit`.
    Hop {
        kind: TileKind,
        entry: Side,
        exit: Side,
        width: Width,
    },
    /// Connection box, through the core, onto a switch-box output. IO cores
    /// are zero-delay pass-throughs and have no class.
    Core(TileKind),
    /// Connection-box input mux.
    CbIn,
    RegClkToQ,
    Setup,
    ClockSkew,
}

impl PathClass {
    pub fn key(&self) -> String {
        match self {
            PathClass::Hop {
                kind,
                entry,
                exit,
                width,
            } => format!("{}:{}:{}:{}", kind.name(), entry, exit, width),
            PathClass::Core(kind) => format!("{}_core", kind.name().to_ascii_lowercase()),
            PathClass::CbIn => "cb_in".to_string(),
            PathClass::RegClkToQ => "reg_clk_to_q".to_string(),
            PathClass::Setup => "setup".to_string(),
            PathClass::ClockSkew => "clock_skew".to_string(),
        }
    }
}

/// Enumerates every delay class a library must cover for `spec`: one hop
/// class per (tile kind, entry side, exit side, width), a core-traversal
/// class per PE/MEM kind present, and the fixed register/clock classes.
/// The output depends only on the set of tile kinds present.
pub fn enumerate_tile_paths(spec: &ArchSpec) -> Vec<PathClass> {
    let kinds = spec.kinds_present();
    let mut out = Vec::new();
    for kind in &kinds {
        for entry in Side::ALL {
            for exit in Side::ALL {
                for width in Width::ALL {
                    out.push(PathClass::Hop {
                        kind: *kind,
                        entry,
                        exit,
                        width,
                    });
                }
            }
        }
    }
    for kind in &kinds {
        if matches!(kind, TileKind::Pe | TileKind::Mem) {
            out.push(PathClass::Core(*kind));
        }
    }
    out.push(PathClass::CbIn);
    out.push(PathClass::RegClkToQ);
    out.push(PathClass::Setup);
    out.push(PathClass::ClockSkew);
    out
}

/// Element delays in nanoseconds for timing analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayLibrary {
    pub pe_core_ns: f64,
    pub mem_core_ns: f64,
    pub cb_in_ns: f64,
    pub reg_clk_to_q_ns: f64,
    pub setup_ns: f64,
    pub clock_skew_ns: f64,
    sb_hop: BTreeMap<(TileKind, Side, Side, Width), f64>,
}

impl DelayLibrary {
    /// Uniform library, handy for tests.
    pub fn uniform(core: f64, hop: f64, overhead: f64) -> DelayLibrary {
        let mut sb_hop = BTreeMap::new();
        for kind in [TileKind::Pe, TileKind::Mem, TileKind::Io] {
            for entry in Side::ALL {
                for exit in Side::ALL {
                    for width in Width::ALL {
                        sb_hop.insert((kind, entry, exit, width), hop);
                    }
                }
            }
        }
        DelayLibrary {
            pe_core_ns: core,
            mem_core_ns: core,
            cb_in_ns: overhead,
            reg_clk_to_q_ns: overhead,
            setup_ns: overhead,
            clock_skew_ns: overhead,
            sb_hop,
        }
    }

    pub fn core_ns(&self, kind: TileKind) -> f64 {
        match kind {
            TileKind::Pe => self.pe_core_ns,
            TileKind::Mem => self.mem_core_ns,
            TileKind::Io => 0.0,
        }
    }

    /// Overrides one switch-box traversal delay.
    pub fn set_hop(&mut self, kind: TileKind, entry: Side, exit: Side, width: Width, ns: f64) {
        self.sb_hop.insert((kind, entry, exit, width), ns);
    }

    pub fn hop_ns(&self, kind: TileKind, entry: Side, exit: Side, width: Width) -> Result<f64, ArchError> {
        self.sb_hop
            .get(&(kind, entry, exit, width))
            .copied()
            .ok_or_else(|| {
                ArchError::Delay(format!(
                    "no hop delay for {}:{}:{}:{}",
                    kind.name(),
                    entry,
                    exit,
                    width
                ))
            })
    }
}

fn default_true() -> bool {
    true
}

fn default_one() -> u8 {
    1
}

fn default_regfile() -> u16 {
    32
}

#[derive(Serialize, Deserialize)]
struct ArchSection {
    rows: u16,
    cols: u16,
    /// One string per row, one of `P`/`M`/`I` per tile.
    tiles: Vec<String>,
    tracks16: u8,
    tracks1: u8,
    #[serde(default = "default_true")]
    sb_register_sites: bool,
    #[serde(default = "default_one")]
    pe_input_registers: u8,
    #[serde(default = "default_regfile")]
    regfile_depth: u16,
    #[serde(default)]
    hardened_nets: BTreeSet<String>,
    #[serde(default)]
    io_rows: BTreeSet<u16>,
}

#[derive(Serialize, Deserialize)]
struct DelaySection {
    #[serde(default)]
    pe_core: Option<f64>,
    #[serde(default)]
    mem_core: Option<f64>,
    cb_in: f64,
    reg_clk_to_q: f64,
    setup: f64,
    clock_skew: f64,
    sb_hop: BTreeMap<String, f64>,
}

#[derive(Serialize, Deserialize)]
struct ArchFile {
    arch: ArchSection,
    delays: DelaySection,
}

fn spec_from_section(a: &ArchSection) -> Result<ArchSpec, ArchError> {
    let mut tiles = BTreeMap::new();
    for (r, row) in a.tiles.iter().enumerate() {
        for (c, ch) in row.chars().enumerate() {
            let kind = TileKind::from_letter(ch).ok_or_else(|| {
                ArchError::Parse(format!("tile row {r} has unknown kind {ch:?} (use P/M/I)"))
            })?;
            tiles.insert(Coord::new(r as u16, c as u16), kind);
        }
    }
    Ok(ArchSpec {
        rows: a.rows,
        cols: a.cols,
        tiles,
        tracks16: a.tracks16,
        tracks1: a.tracks1,
        sb_register_sites: a.sb_register_sites,
        pe_input_registers: a.pe_input_registers,
        regfile_depth: a.regfile_depth,
        hardened_nets: a.hardened_nets.clone(),
        io_rows: a.io_rows.clone(),
    })
}

fn section_from_spec(spec: &ArchSpec) -> ArchSection {
    let mut rows = Vec::new();
    for r in 0..spec.rows {
        let mut s = String::new();
        for c in 0..spec.cols {
            s.push(
                spec.tile_kind(Coord::new(r, c))
                    .map(TileKind::letter)
                    .unwrap_or('P'),
            );
        }
        rows.push(s);
    }
    ArchSection {
        rows: spec.rows,
        cols: spec.cols,
        tiles: rows,
        tracks16: spec.tracks16,
        tracks1: spec.tracks1,
        sb_register_sites: spec.sb_register_sites,
        pe_input_registers: spec.pe_input_registers,
        regfile_depth: spec.regfile_depth,
        hardened_nets: spec.hardened_nets.clone(),
        io_rows: spec.io_rows.clone(),
    }
}

/// Parsed form of one `sb_hop` key: each field is a concrete value or a
/// wildcard. More specific keys (fewer wildcards) override broader ones.
struct HopPattern {
    kind: Option<TileKind>,
    entry: Option<Side>,
    exit: Option<Side>,
    width: Option<Width>,
    wildcards: u32,
}

fn parse_hop_key(key: &str) -> Result<HopPattern, ArchError> {
    let parts: Vec<&str> = key.split(':').collect();
    if parts.len() != 4 {
        return Err(ArchError::Delay(format!(
            "sb_hop key {key:?} is not KIND:ENTRY:EXIT:WIDTH"
        )));
    }
    let wild = |s: &str| s == "*";
    let kind = if wild(parts[0]) {
        None
    } else {
        Some(TileKind::from_name(parts[0]).ok_or_else(|| {
            ArchError::Delay(format!("sb_hop key {key:?}: unknown tile kind {:?}", parts[0]))
        })?)
    };
    let entry = if wild(parts[1]) {
        None
    } else {
        Some(Side::from_letter(parts[1]).ok_or_else(|| {
            ArchError::Delay(format!("sb_hop key {key:?}: unknown side {:?}", parts[1]))
        })?)
    };
    let exit = if wild(parts[2]) {
        None
    } else {
        Some(Side::from_letter(parts[2]).ok_or_else(|| {
            ArchError::Delay(format!("sb_hop key {key:?}: unknown side {:?}", parts[2]))
        })?)
    };
    let width = if wild(parts[3]) {
        None
    } else {
        let bits: u64 = parts[3]
            .parse()
            .map_err(|_| ArchError::Delay(format!("sb_hop key {key:?}: bad width {:?}", parts[3])))?;
        Some(Width::from_bits(bits).ok_or_else(|| {
            ArchError::Delay(format!("sb_hop key {key:?}: width must be 16 or 1"))
        })?)
    };
    let wildcards = [kind.is_none(), entry.is_none(), exit.is_none(), width.is_none()]
        .iter()
        .filter(|b| **b)
        .count() as u32;
    Ok(HopPattern {
        kind,
        entry,
        exit,
        width,
        wildcards,
    })
}

fn delays_from_section(sec: &DelaySection, spec: &ArchSpec) -> Result<DelayLibrary, ArchError> {
    let classes = enumerate_tile_paths(spec);
    let fixed = [
        ("cb_in", sec.cb_in),
        ("reg_clk_to_q", sec.reg_clk_to_q),
        ("setup", sec.setup),
        ("clock_skew", sec.clock_skew),
    ];
    for (name, v) in fixed {
        if v < 0.0 {
            return Err(ArchError::Delay(format!("{name} is negative")));
        }
    }
    for (name, v) in [("pe_core", sec.pe_core), ("mem_core", sec.mem_core)] {
        if let Some(v) = v {
            if v < 0.0 {
                return Err(ArchError::Delay(format!("{name} is negative")));
            }
        }
    }
    // Keys sorted by (wildcard count desc, key) so specific entries land last.
    let mut patterns: Vec<(String, HopPattern, f64)> = Vec::new();
    for (key, value) in &sec.sb_hop {
        if *value < 0.0 {
            return Err(ArchError::Delay(format!("sb_hop {key:?} is negative")));
        }
        patterns.push((key.clone(), parse_hop_key(key)?, *value));
    }
    patterns.sort_by(|a, b| b.1.wildcards.cmp(&a.1.wildcards).then(a.0.cmp(&b.0)));

    let mut sb_hop = BTreeMap::new();
    for class in &classes {
        if let PathClass::Hop {
            kind,
            entry,
            exit,
            width,
        } = class
        {
            for (_, pat, value) in &patterns {
                let hit = pat.kind.map_or(true, |k| k == *kind)
                    && pat.entry.map_or(true, |e| e == *entry)
                    && pat.exit.map_or(true, |e| e == *exit)
                    && pat.width.map_or(true, |w| w == *width);
                if hit {
                    sb_hop.insert((*kind, *entry, *exit, *width), *value);
                }
            }
        }
    }

    let mut missing = Vec::new();
    for class in &classes {
        match class {
            PathClass::Hop {
                kind,
                entry,
                exit,
                width,
            } => {
                if !sb_hop.contains_key(&(*kind, *entry, *exit, *width)) {
                    missing.push(class.key());
                }
            }
            PathClass::Core(TileKind::Pe) if sec.pe_core.is_none() => missing.push(class.key()),
            PathClass::Core(TileKind::Mem) if sec.mem_core.is_none() => missing.push(class.key()),
            _ => {}
        }
    }
    if !missing.is_empty() {
        return Err(ArchError::Coverage {
            missing: missing.len(),
            first: missing[0].clone(),
        });
    }

    Ok(DelayLibrary {
        pe_core_ns: sec.pe_core.unwrap_or(0.0),
        mem_core_ns: sec.mem_core.unwrap_or(0.0),
        cb_in_ns: sec.cb_in,
        reg_clk_to_q_ns: sec.reg_clk_to_q,
        setup_ns: sec.setup,
        clock_skew_ns: sec.clock_skew,
        sb_hop,
    })
}

/// Loads an architecture file: JSON with top-level `arch` and `delays` keys.
/// The spec is validated and the library checked for full class coverage.
pub fn load_arch_file(text: &str) -> Result<(ArchSpec, DelayLibrary), ArchError> {
    let file: ArchFile = serde_json::from_str(text)
        .map_err(|e| ArchError::Parse(format!("line {}: {}", e.line(), e)))?;
    let spec = spec_from_section(&file.arch)?;
    let violations = validate_arch(&spec);
    if !violations.is_empty() {
        return Err(ArchError::Invalid(violations.join("; ")));
    }
    let lib = delays_from_section(&file.delays, &spec)?;
    Ok((spec, lib))
}

/// Loads only the `arch` section and reports validation violations instead of
/// failing, for `arch-check` style use.
pub fn load_arch_lenient(text: &str) -> Result<(ArchSpec, Vec<String>), ArchError> {
    let file: ArchFile = serde_json::from_str(text)
        .map_err(|e| ArchError::Parse(format!("line {}: {}", e.line(), e)))?;
    let spec = spec_from_section(&file.arch)?;
    let violations = validate_arch(&spec);
    Ok((spec, violations))
}

/// Loads a delay library for `spec`. Accepts either a full architecture file
/// or a bare delay section. Hop keys are `KIND:ENTRY:EXIT:WIDTH` with `*`
/// wildcards; specific keys override broader ones. Every class returned by
/// [`enumerate_tile_paths`] must be covered and no delay may be negative.
pub fn load_delay_library(text: &str, spec: &ArchSpec) -> Result<DelayLibrary, ArchError> {
    if let Ok(file) = serde_json::from_str::<ArchFile>(text) {
        return delays_from_section(&file.delays, spec);
    }
    let sec: DelaySection = serde_json::from_str(text)
        .map_err(|e| ArchError::Parse(format!("line {}: {}", e.line(), e)))?;
    delays_from_section(&sec, spec)
}

/// Serializes a spec plus library back into the file format.
pub fn arch_file_json(spec: &ArchSpec, lib: &DelayLibrary) -> String {
    let mut sb_hop = BTreeMap::new();
    for ((kind, entry, exit, width), v) in &lib.sb_hop {
        sb_hop.insert(format!("{}:{}:{}:{}", kind.name(), entry, exit, width), *v);
    }
    let file = ArchFile {
        arch: section_from_spec(spec),
        delays: DelaySection {
            pe_core: Some(lib.pe_core_ns),
            mem_core: Some(lib.mem_core_ns),
            cb_in: lib.cb_in_ns,
            reg_clk_to_q: lib.reg_clk_to_q_ns,
            setup: lib.setup_ns,
            clock_skew: lib.clock_skew_ns,
            sb_hop,
        },
    };
    serde_json::to_string_pretty(&file).expect("arch file serialization")
}

/// Input ports a tile of `kind` offers to the connection box.
pub fn tile_in_ports(kind: TileKind) -> &'static [(&'static str, Width)] {
    match kind {
        TileKind::Pe => &[
            ("in0", Width::W16),
            ("in1", Width::W16),
            ("in2", Width::W16),
            ("inb0", Width::W1),
            ("flush", Width::W1),
        ],
        TileKind::Mem => &[("in", Width::W16), ("flush", Width::W1)],
        TileKind::Io => &[("in", Width::W16), ("inb", Width::W1)],
    }
}

/// Output ports a tile of `kind` can drive onto the switch box.
pub fn tile_out_ports(kind: TileKind) -> &'static [(&'static str, Width)] {
    match kind {
        TileKind::Pe => &[("out", Width::W16), ("outb", Width::W1)],
        TileKind::Mem => &[("out", Width::W16)],
        TileKind::Io => &[("out", Width::W16), ("outb", Width::W1)],
    }
}

/// One routing resource.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RrNode {
    /// Track connection point on one tile side. Used as the switch-box output
    /// when a route leaves the tile through it; carries the register site.
    Sb {
        at: Coord,
        side: Side,
        track: u8,
        width: Width,
    },
    OutPort {
        at: Coord,
        port: &'static str,
        width: Width,
    },
    CbIn {
        at: Coord,
        port: &'static str,
        width: Width,
    },
    InPort {
        at: Coord,
        port: &'static str,
        width: Width,
    },
}

/// Edge classes in the routing graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RrEdge {
    /// Track wire between facing sides of adjacent tiles.
    Wire,
    /// Switch-box crossing between two sides of the same tile, same track.
    Cross,
    /// Core output onto one of its own switch-box outputs.
    Drive,
    /// Connection-box tap of a track present at this tile.
    Tap,
    /// Connection-box mux into the tile input port.
    PortIn,
}

/// Routing-resource graph for one architecture.
pub struct RoutingGraph {
    pub nodes: Vec<RrNode>,
    pub edges: Vec<Vec<(u32, RrEdge)>>,
    pub register_site: Vec<bool>,
    sb_index: BTreeMap<(Coord, Side, u8, Width), u32>,
}

impl RoutingGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Index of the switch-box node at `(at, side, track, width)`.
    pub fn sb(&self, at: Coord, side: Side, track: u8, width: Width) -> Option<u32> {
        self.sb_index.get(&(at, side, track, width)).copied()
    }

    pub fn node(&self, idx: u32) -> &RrNode {
        &self.nodes[idx as usize]
    }

    pub fn out_edges(&self, idx: u32) -> &[(u32, RrEdge)] {
        &self.edges[idx as usize]
    }

    pub fn sb_node_count(&self, width: Width) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, RrNode::Sb { width: w, .. } if *w == width))
            .count()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    /// Directed Wire edges of `width` between tiles `a` and `b`, both ways.
    pub fn wire_edges_between(&self, a: Coord, b: Coord, width: Width) -> usize {
        let mut n = 0;
        for (idx, node) in self.nodes.iter().enumerate() {
            let RrNode::Sb { at, width: w, .. } = node else {
                continue;
            };
            if *w != width || (*at != a && *at != b) {
                continue;
            }
            for (to, kind) in &self.edges[idx] {
                if *kind != RrEdge::Wire {
                    continue;
                }
                if let RrNode::Sb { at: to_at, .. } = self.node(*to) {
                    if (*at == a && *to_at == b) || (*at == b && *to_at == a) {
                        n += 1;
                    }
                }
            }
        }
        n
    }
}

/// Builds the routing-resource graph: one switch-box node per
/// (tile, side, track, width), wire edges between facing sides of adjacent
/// tiles, switch-box crossings within each tile, core drive edges, and
/// connection-box taps into tile input ports.
pub fn build_routing_graph(spec: &ArchSpec) -> Result<RoutingGraph, ArchError> {
    let violations = validate_arch(spec);
    if !violations.is_empty() {
        return Err(ArchError::Invalid(violations.join("; ")));
    }

    let mut nodes = Vec::new();
    let mut sb_index = BTreeMap::new();
    let mut out_index: BTreeMap<(Coord, &'static str, Width), u32> = BTreeMap::new();
    let mut cb_index: BTreeMap<(Coord, &'static str, Width), u32> = BTreeMap::new();
    let mut in_index: BTreeMap<(Coord, &'static str, Width), u32> = BTreeMap::new();

    for at in spec.coords() {
        for side in Side::ALL {
            for width in Width::ALL {
                for track in 0..spec.tracks(width) {
                    sb_index.insert((at, side, track, width), nodes.len() as u32);
                    nodes.push(RrNode::Sb {
                        at,
                        side,
                        track,
                        width,
                    });
                }
            }
        }
    }
    for at in spec.coords() {
        let kind = spec.tile_kind(at).expect("validated grid");
        for (port, width) in tile_out_ports(kind) {
            out_index.insert((at, port, *width), nodes.len() as u32);
            nodes.push(RrNode::OutPort {
                at,
                port,
                width: *width,
            });
        }
        for (port, width) in tile_in_ports(kind) {
            cb_index.insert((at, port, *width), nodes.len() as u32);
            nodes.push(RrNode::CbIn {
                at,
                port,
                width: *width,
            });
            in_index.insert((at, port, *width), nodes.len() as u32);
            nodes.push(RrNode::InPort {
                at,
                port,
                width: *width,
            });
        }
    }

    let mut edges = vec![Vec::new(); nodes.len()];
    let register_site = nodes
        .iter()
        .map(|n| matches!(n, RrNode::Sb { .. }) && spec.sb_register_sites)
        .collect();

    for (key, idx) in &sb_index {
        let (at, side, track, width) = *key;
        // Wire to the facing side of the adjacent tile.
        if let Some(n) = spec.neighbor(at, side) {
            let to = sb_index[&(n, side.opposite(), track, width)];
            edges[*idx as usize].push((to, RrEdge::Wire));
        }
        // Crossings to the other sides of this tile, same track.
        for exit in Side::ALL {
            if exit != side {
                let to = sb_index[&(at, exit, track, width)];
                edges[*idx as usize].push((to, RrEdge::Cross));
            }
        }
        // Taps into this tile's input ports of the same width.
        let kind = spec.tile_kind(at).expect("validated grid");
        for (port, pw) in tile_in_ports(kind) {
            if *pw == width {
                let to = cb_index[&(at, *port, *pw)];
                edges[*idx as usize].push((to, RrEdge::Tap));
            }
        }
    }
    for (key, idx) in &out_index {
        let (at, _, width) = *key;
        for side in Side::ALL {
            for track in 0..spec.tracks(width) {
                let to = sb_index[&(at, side, track, width)];
                edges[*idx as usize].push((to, RrEdge::Drive));
            }
        }
    }
    for (key, idx) in &cb_index {
        let to = in_index[key];
        edges[*idx as usize].push((to, RrEdge::PortIn));
    }

    Ok(RoutingGraph {
        nodes,
        edges,
        register_site,
        sb_index,
    })
}
