//! Gridded data model and the GRD1 binary container.
//!
//! A GRD1 file holds a `[time][var][lat][lon]` block of little-endian `f32`
//! values together with the grid geometry and variable catalog. The same
//! container carries hourly archives (`step_hours = 1`), daily-mean shards
//! and forecast trajectories (`step_hours = 24`) and static fields such as
//! orography (`step_hours = 0`, one time slice).
//!
//! Layout:
//!
//! ```text
//! "GRD1"
//! u32 version (=1), u32 n_time, u32 n_var, u32 n_lat, u32 n_lon, u32 step_hours
//! i64 start_epoch_hours
//! u32 metadata_len, metadata (UTF-8, one record per line):
//!     var=<short_name>:<level_or_dash>:<units>    (catalog order)
//!     lat=<csv degrees>
//!     lon=<csv degrees>
//! payload: n_time*n_var*n_lat*n_lon f32
//! ```

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use crate::kv::{join_csv, parse_csv};

pub const GRD_MAGIC: &[u8; 4] = b"GRD1";
pub const GRD_VERSION: u32 = 1;

/// Pressure levels (hPa) of the upper-air variables, surface first.
pub const PRESSURE_LEVELS: [u32; 12] = [1000, 925, 850, 800, 700, 600, 500, 400, 300, 200, 100, 50];

#[derive(Debug, Error)]
pub enum GridError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("version mismatch: file has {0}, expected {GRD_VERSION}")]
    VersionMismatch(u32),
    #[error("payload length mismatch: expected {expected} bytes, found {found}")]
    PayloadLength { expected: usize, found: usize },
    #[error("truncated header")]
    TruncatedHeader,
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("unknown variable {0:?}")]
    UnknownVariable(String),
    #[error("bad metadata: {0}")]
    Metadata(String),
    #[error("invalid grid: {0}")]
    Invalid(String),
}

/// Regular latitude/longitude grid. Latitudes run north to south,
/// longitudes eastward from 0.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    lat_deg: Vec<f64>,
    lon_deg: Vec<f64>,
}

impl GridSpec {
    pub fn new(lat_deg: Vec<f64>, lon_deg: Vec<f64>) -> Result<Self, GridError> {
        if lat_deg.len() < 2 || lon_deg.len() < 2 {
            return Err(GridError::Invalid(format!(
                "need at least 2x2 points, got {}x{}",
                lat_deg.len(),
                lon_deg.len()
            )));
        }
        if lat_deg.iter().chain(&lon_deg).any(|v| !v.is_finite()) {
            return Err(GridError::Invalid("non-finite coordinate".into()));
        }
        if lat_deg.windows(2).any(|w| w[1] >= w[0]) {
            return Err(GridError::Invalid("latitudes must be strictly descending".into()));
        }
        if lat_deg[0] > 90.0 || *lat_deg.last().unwrap() < -90.0 {
            return Err(GridError::Invalid("latitudes outside [-90, 90]".into()));
        }
        let dlon = lon_deg[1] - lon_deg[0];
        if dlon <= 0.0 {
            return Err(GridError::Invalid("longitudes must be strictly ascending".into()));
        }
        for w in lon_deg.windows(2) {
            if ((w[1] - w[0]) - dlon).abs() > 1e-9 * dlon.max(1.0) {
                return Err(GridError::Invalid("longitude spacing is not uniform".into()));
            }
        }
        Ok(Self { lat_deg, lon_deg })
    }

    /// Cell-centred global grid: latitudes `90 - (j + 1/2) * 180/n_lat`,
    /// longitudes `k * 360/n_lon`. No row sits on a pole.
    pub fn global(n_lat: usize, n_lon: usize) -> Result<Self, GridError> {
        let dlat = 180.0 / n_lat as f64;
        let dlon = 360.0 / n_lon as f64;
        let lat = (0..n_lat).map(|j| 90.0 - (j as f64 + 0.5) * dlat).collect();
        let lon = (0..n_lon).map(|k| k as f64 * dlon).collect();
        Self::new(lat, lon)
    }

    /// 2.5 degree global grid, 72 x 144.
    pub fn era5_2p5deg() -> Self {
        Self::global(72, 144).expect("static grid is valid")
    }

    pub fn n_lat(&self) -> usize {
        self.lat_deg.len()
    }

    pub fn n_lon(&self) -> usize {
        self.lon_deg.len()
    }

    pub fn n_points(&self) -> usize {
        self.n_lat() * self.n_lon()
    }

    pub fn lat_deg(&self) -> &[f64] {
        &self.lat_deg
    }

    pub fn lon_deg(&self) -> &[f64] {
        &self.lon_deg
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Variable {
    pub short_name: String,
    pub level_hpa: Option<u32>,
    pub units: String,
}

impl Variable {
    pub fn new(short_name: &str, level_hpa: Option<u32>, units: &str) -> Self {
        Self {
            short_name: short_name.to_string(),
            level_hpa,
            units: units.to_string(),
        }
    }

    /// Lookup key: lowercase short name with the level appended, e.g. `z500`, `t2m`.
    pub fn key(&self) -> String {
        match self.level_hpa {
            Some(level) => format!("{}{}", self.short_name.to_lowercase(), level),
            None => self.short_name.to_lowercase(),
        }
    }

    fn to_record(&self) -> String {
        let level = self.level_hpa.map_or_else(|| "-".to_string(), |l| l.to_string());
        format!("{}:{}:{}", self.short_name, level, self.units)
    }

    fn from_record(rec: &str) -> Result<Self, GridError> {
        let mut parts = rec.splitn(3, ':');
        let (Some(name), Some(level), Some(units)) = (parts.next(), parts.next(), parts.next())
        else {
            return Err(GridError::Metadata(format!("bad var record {rec:?}")));
        };
        let level_hpa = match level {
            "-" => None,
            l => Some(
                l.parse()
                    .map_err(|_| GridError::Metadata(format!("bad level in {rec:?}")))?,
            ),
        };
        Ok(Self::new(name, level_hpa, units))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableCatalog {
    entries: Vec<Variable>,
}

impl VariableCatalog {
    pub fn new(entries: Vec<Variable>) -> Result<Self, GridError> {
        if entries.is_empty() {
            return Err(GridError::Invalid("empty variable catalog".into()));
        }
        for (i, v) in entries.iter().enumerate() {
            if v.short_name.is_empty()
                || v.short_name.contains([':', '\n'])
                || v.units.contains('\n')
            {
                return Err(GridError::Invalid(format!("bad variable name {:?}", v.short_name)));
            }
            if entries[..i].iter().any(|o| o.key() == v.key()) {
                return Err(GridError::Invalid(format!("duplicate variable {}", v.key())));
            }
        }
        Ok(Self { entries })
    }

    /// The 66 dynamic variables: u, v, t, q, z on 12 pressure levels and six
    /// single-level fields. Orography is not part of the catalog.
    pub fn era5_66() -> Self {
        let upper = [("U", "m/s"), ("V", "m/s"), ("T", "K"), ("Q", "kg/kg"), ("Z", "m2/s2")];
        let mut entries: Vec<Variable> = upper
            .iter()
            .flat_map(|&(name, units)| {
                PRESSURE_LEVELS
                    .iter()
                    .map(move |&l| Variable::new(name, Some(l), units))
            })
            .collect();
        for (name, units) in [
            ("T2m", "K"),
            ("MSL", "Pa"),
            ("SP", "Pa"),
            ("TCWV", "kg/m2"),
            ("SKT", "K"),
            ("TISR", "J/m2"),
        ] {
            entries.push(Variable::new(name, None, units));
        }
        Self::new(entries).expect("static catalog is valid")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Variable] {
        &self.entries
    }

    pub fn index_of(&self, key: &str) -> Option<usize> {
        let key = key.to_lowercase();
        self.entries.iter().position(|v| v.key() == key)
    }

    pub fn keys(&self) -> Vec<String> {
        self.entries.iter().map(Variable::key).collect()
    }
}

/// Contiguous block of gridded snapshots, `[time][var][lat][lon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridArchive {
    spec: GridSpec,
    catalog: VariableCatalog,
    start_epoch_hours: i64,
    step_hours: u32,
    n_time: usize,
    values: Vec<f32>,
}

/// Hourly archives are GRD1 archives with `step_hours = 1`.
pub type HourlyArchive = GridArchive;

impl GridArchive {
    pub fn new(
        spec: GridSpec,
        catalog: VariableCatalog,
        start_epoch_hours: i64,
        step_hours: u32,
        values: Vec<f32>,
    ) -> Result<Self, GridError> {
        let frame = catalog.len() * spec.n_points();
        if values.len() % frame != 0 || values.is_empty() {
            return Err(GridError::Invalid(format!(
                "value count {} is not a positive multiple of frame size {frame}",
                values.len()
            )));
        }
        let n_time = values.len() / frame;
        match step_hours {
            0 if n_time != 1 => {
                return Err(GridError::Invalid("static field must have one time slice".into()))
            }
            1 if n_time < 24 => {
                return Err(GridError::Invalid(format!(
                    "hourly archive needs at least 24 snapshots, got {n_time}"
                )))
            }
            _ => {}
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite(i));
        }
        Ok(Self {
            spec,
            catalog,
            start_epoch_hours,
            step_hours,
            n_time,
            values,
        })
    }

    /// Single-time, single-variable field with no time axis (e.g. orography).
    pub fn static_field(spec: GridSpec, var: Variable, values: Vec<f32>) -> Result<Self, GridError> {
        let catalog = VariableCatalog::new(vec![var])?;
        Self::new(spec, catalog, 0, 0, values)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn catalog(&self) -> &VariableCatalog {
        &self.catalog
    }

    pub fn start_epoch_hours(&self) -> i64 {
        self.start_epoch_hours
    }

    pub fn step_hours(&self) -> u32 {
        self.step_hours
    }

    pub fn n_time(&self) -> usize {
        self.n_time
    }

    pub fn n_var(&self) -> usize {
        self.catalog.len()
    }

    /// Values in one time slice, `n_var * n_lat * n_lon`.
    pub fn frame_len(&self) -> usize {
        self.n_var() * self.spec.n_points()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    /// All variables at time index `t`.
    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.values[t * n..(t + 1) * n]
    }

    /// One variable at time index `t`, `n_lat * n_lon`.
    pub fn field(&self, t: usize, var: usize) -> &[f32] {
        let np = self.spec.n_points();
        let off = t * self.frame_len() + var * np;
        &self.values[off..off + np]
    }

    /// Drops the first `hours` time slices. Used to relate lagged windows
    /// to plain daily means of a shifted record.
    pub fn drop_leading(&self, hours: usize) -> Result<Self, GridError> {
        let n = self.frame_len();
        Self::new(
            self.spec.clone(),
            self.catalog.clone(),
            self.start_epoch_hours + (hours as i64) * self.step_hours as i64,
            self.step_hours,
            self.values[hours.min(self.n_time) * n..].to_vec(),
        )
    }

    fn metadata(&self) -> String {
        let mut text = String::new();
        for v in self.catalog.entries() {
            text.push_str(&format!("var={}\n", v.to_record()));
        }
        text.push_str(&format!("lat={}\n", join_csv(self.spec.lat_deg())));
        text.push_str(&format!("lon={}\n", join_csv(self.spec.lon_deg())));
        text
    }

    /// Encodes the archive as a GRD1 byte stream.
    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = self.metadata();
        let mut out = Vec::with_capacity(44 + meta.len() + 4 * self.values.len());
        out.extend_from_slice(GRD_MAGIC);
        for field in [
            GRD_VERSION,
            self.n_time as u32,
            self.n_var() as u32,
            self.spec.n_lat() as u32,
            self.spec.n_lon() as u32,
            self.step_hours,
        ] {
            out.extend_from_slice(&field.to_le_bytes());
        }
        out.extend_from_slice(&self.start_epoch_hours.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GridError> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic: [u8; 4] = cur.take(4)?.try_into().unwrap();
        if &magic != GRD_MAGIC {
            return Err(GridError::BadMagic(magic));
        }
        let version = cur.u32()?;
        if version != GRD_VERSION {
            return Err(GridError::VersionMismatch(version));
        }
        let n_time = cur.u32()? as usize;
        let n_var = cur.u32()? as usize;
        let n_lat = cur.u32()? as usize;
        let n_lon = cur.u32()? as usize;
        let step_hours = cur.u32()?;
        let start_epoch_hours = i64::from_le_bytes(cur.take(8)?.try_into().unwrap());
        let meta_len = cur.u32()? as usize;
        let meta = std::str::from_utf8(cur.take(meta_len)?)
            .map_err(|_| GridError::Metadata("metadata is not UTF-8".into()))?;

        let mut vars = Vec::new();
        let mut lat = None;
        let mut lon = None;
        for line in meta.lines() {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| GridError::Metadata(format!("bad record {line:?}")))?;
            match key {
                "var" => vars.push(Variable::from_record(value)?),
                "lat" => lat = Some(parse_csv::<f64>(value)),
                "lon" => lon = Some(parse_csv::<f64>(value)),
                _ => return Err(GridError::Metadata(format!("unknown record {key:?}"))),
            }
        }
        let lat = lat
            .ok_or_else(|| GridError::Metadata("missing lat record".into()))?
            .map_err(|_| GridError::Metadata("bad lat list".into()))?;
        let lon = lon
            .ok_or_else(|| GridError::Metadata("missing lon record".into()))?
            .map_err(|_| GridError::Metadata("bad lon list".into()))?;
        if vars.len() != n_var || lat.len() != n_lat || lon.len() != n_lon {
            return Err(GridError::Metadata(
                "header dimensions disagree with metadata".into(),
            ));
        }
        let spec = GridSpec::new(lat, lon)?;
        let catalog = VariableCatalog::new(vars)?;

        let expected = n_time
            .checked_mul(n_var * n_lat * n_lon * 4)
            .ok_or_else(|| GridError::Metadata("dimensions overflow".into()))?;
        let payload = &bytes[cur.pos..];
        if payload.len() != expected {
            return Err(GridError::PayloadLength {
                expected,
                found: payload.len(),
            });
        }
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(spec, catalog, start_epoch_hours, step_hours, values)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], GridError> {
        let end = self.pos.checked_add(n).ok_or(GridError::TruncatedHeader)?;
        let s = self.bytes.get(self.pos..end).ok_or(GridError::TruncatedHeader)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, GridError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// One lagged daily-mean field, `[var][lat][lon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DailySample {
    pub day_index: usize,
    pub lag_hours: u32,
    pub values: Vec<f32>,
}

pub fn write_archive(archive: &GridArchive, path: impl AsRef<Path>) -> Result<(), GridError> {
    if let Some(i) = archive.values.iter().position(|v| !v.is_finite()) {
        return Err(GridError::NonFinite(i));
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&archive.to_bytes())?;
    file.flush()?;
    Ok(())
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<GridArchive, GridError> {
    GridArchive::from_bytes(&fs::read(path)?)
}

/// Extracts the named variables, in request order.
pub fn slice_vars(archive: &GridArchive, names: &[&str]) -> Result<GridArchive, GridError> {
    let idx = names
        .iter()
        .map(|n| {
            archive
                .catalog
                .index_of(n)
                .ok_or_else(|| GridError::UnknownVariable(n.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let catalog = VariableCatalog::new(
        idx.iter()
            .map(|&i| archive.catalog.entries()[i].clone())
            .collect(),
    )?;
    let np = archive.spec.n_points();
    let mut values = Vec::with_capacity(archive.n_time * idx.len() * np);
    for t in 0..archive.n_time {
        for &v in &idx {
            values.extend_from_slice(archive.field(t, v));
        }
    }
    GridArchive::new(
        archive.spec.clone(),
        catalog,
        archive.start_epoch_hours,
        archive.step_hours,
        values,
    )
}
