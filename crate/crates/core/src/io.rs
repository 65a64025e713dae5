//! Plain-text scan, pose, map and track files.
//!
//! Writers produce the canonical form; readers accept exactly that grammar
//! and report the offending line on error. Reading a canonical file and
//! writing it back reproduces it byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rustc_hash::FxHashSet;

use crate::error::{Error, Result};
use crate::eval::TrackRecord;
use crate::front_end::BoundingBox;
use crate::geometry::{Label, LabeledScan, Point3, PoseSE3, VoxelKey};
use crate::voxel_map::VoxelMap;

const SCAN_MAGIC: &str = "SMAT-SCAN";
const MAP_MAGIC: &str = "SMAT-MAP";
const TRACKS_MAGIC: &str = "SMAT-TRACKS";
const VERSION: &str = "v1";

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Line cursor carrying the path for diagnostics.
struct Lines<'a> {
    path: &'a Path,
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn new(path: &'a Path, text: &'a str) -> Self {
        Lines { path, iter: text.lines().enumerate(), line: 0 }
    }

    fn next(&mut self) -> Option<&'a str> {
        let (i, l) = self.iter.next()?;
        self.line = i + 1;
        Some(l)
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse { path: self.path.to_path_buf(), line: self.line, msg: msg.into() }
    }

    fn fields(&self, l: &'a str, expected: &[usize]) -> Result<Vec<&'a str>> {
        let f: Vec<&str> = l.split(' ').collect();
        if !expected.contains(&f.len()) || f.iter().any(|t| t.is_empty()) {
            let want: Vec<String> = expected.iter().map(|n| n.to_string()).collect();
            return Err(self.err(format!(
                "expected {} single-space separated fields, found {:?}",
                want.join(" or "),
                l
            )));
        }
        Ok(f)
    }

    fn float(&self, token: &str) -> Result<f64> {
        let v: f64 = token.parse().map_err(|_| self.err(format!("not a number: {token:?}")))?;
        if !v.is_finite() {
            return Err(Error::NonFiniteNumber {
                path: self.path.to_path_buf(),
                line: self.line,
                token: token.to_string(),
            });
        }
        Ok(v)
    }

    fn int<T: std::str::FromStr>(&self, token: &str) -> Result<T> {
        token.parse().map_err(|_| self.err(format!("not an integer: {token:?}")))
    }

    fn header(&mut self, magic: &str, fields: usize) -> Result<Vec<&'a str>> {
        let Some(l) = self.next() else {
            self.line = 1;
            return Err(self.err("empty file"));
        };
        let f = self.fields(l, &[fields])?;
        if f[0] != magic || f[1] != VERSION {
            return Err(self.err(format!("expected header \"{magic} {VERSION} ...\"")));
        }
        Ok(f)
    }
}

pub fn scan_to_string(scan: &LabeledScan) -> String {
    let mut s = String::with_capacity(32 * (scan.len() + 1));
    let labeled = scan.labels.is_some();
    writeln!(s, "{SCAN_MAGIC} {VERSION} {:.6} {} {}", scan.timestamp, scan.len(), labeled as u8).unwrap();
    for (i, p) in scan.points.iter().enumerate() {
        write!(s, "{:.6} {:.6} {:.6}", p.x, p.y, p.z).unwrap();
        if let Some(labels) = &scan.labels {
            let l = match labels[i] {
                Label::Static => 0,
                Label::Dynamic => 1,
            };
            write!(s, " {l}").unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn parse_scan(path: &Path, text: &str) -> Result<LabeledScan> {
    let mut lines = Lines::new(path, text);
    let h = lines.header(SCAN_MAGIC, 5)?;
    let timestamp = lines.float(h[2])?;
    let declared: usize = lines.int(h[3])?;
    let labeled = match h[4] {
        "0" => false,
        "1" => true,
        other => return Err(lines.err(format!("labeled flag must be 0 or 1, found {other:?}"))),
    };
    let mut points = Vec::with_capacity(declared);
    let mut labels = labeled.then(|| Vec::with_capacity(declared));
    while let Some(l) = lines.next() {
        let f = lines.fields(l, if labeled { &[4] } else { &[3] })?;
        points.push(Point3::new(lines.float(f[0])?, lines.float(f[1])?, lines.float(f[2])?));
        if let Some(labels) = labels.as_mut() {
            labels.push(match f[3] {
                "0" => Label::Static,
                "1" => Label::Dynamic,
                other => return Err(lines.err(format!("label must be 0 or 1, found {other:?}"))),
            });
        }
    }
    if points.len() != declared {
        return Err(Error::CountMismatch { path: path.to_path_buf(), declared, found: points.len() });
    }
    LabeledScan::new(timestamp, points, labels)
}

pub fn read_scan(path: &Path) -> Result<LabeledScan> {
    parse_scan(path, &read_text(path)?)
}

pub fn write_scan(path: &Path, scan: &LabeledScan) -> Result<()> {
    write_text(path, &scan_to_string(scan))
}

/// One pose line as stored, before conversion to a rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseRecord {
    pub timestamp: f64,
    pub translation: [f64; 3],
    /// `[qx, qy, qz, qw]`.
    pub quaternion: [f64; 4],
}

impl PoseRecord {
    pub fn from_pose(timestamp: f64, pose: &PoseSE3) -> Self {
        let t = pose.translation();
        PoseRecord { timestamp, translation: [t.x, t.y, t.z], quaternion: pose.quaternion_xyzw() }
    }

    pub fn pose(&self) -> Result<PoseSE3> {
        let [x, y, z] = self.translation;
        PoseSE3::from_quaternion(Vector3::new(x, y, z), self.quaternion)
    }
}

pub fn poses_to_string(records: &[PoseRecord]) -> String {
    let mut s = String::with_capacity(100 * records.len());
    for r in records {
        let [tx, ty, tz] = r.translation;
        let [qx, qy, qz, qw] = r.quaternion;
        writeln!(s, "{:.9} {tx:.9} {ty:.9} {tz:.9} {qx:.9} {qy:.9} {qz:.9} {qw:.9}", r.timestamp).unwrap();
    }
    s
}

pub fn parse_poses(path: &Path, text: &str) -> Result<Vec<PoseRecord>> {
    let mut lines = Lines::new(path, text);
    let mut out: Vec<PoseRecord> = Vec::new();
    while let Some(l) = lines.next() {
        let f = lines.fields(l, &[8])?;
        let v: Vec<f64> = f.iter().map(|t| lines.float(t)).collect::<Result<_>>()?;
        let rec = PoseRecord { timestamp: v[0], translation: [v[1], v[2], v[3]], quaternion: [v[4], v[5], v[6], v[7]] };
        if let Some(prev) = out.last() {
            if rec.timestamp <= prev.timestamp {
                return Err(lines.err(format!(
                    "timestamp {} does not increase over {}",
                    rec.timestamp, prev.timestamp
                )));
            }
        }
        rec.pose().map_err(|e| lines.err(e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_poses(path: &Path) -> Result<Vec<PoseRecord>> {
    parse_poses(path, &read_text(path)?)
}

pub fn write_poses(path: &Path, records: &[PoseRecord]) -> Result<()> {
    write_text(path, &poses_to_string(records))
}

pub fn map_to_string(map: &VoxelMap) -> String {
    let keys = map.sorted_keys();
    let mut s = String::with_capacity(16 * (keys.len() + 1));
    writeln!(s, "{MAP_MAGIC} {VERSION} {} {}", map.resolution(), keys.len()).unwrap();
    for k in keys {
        writeln!(s, "{} {} {}", k.ix, k.iy, k.iz).unwrap();
    }
    s
}

pub fn parse_map(path: &Path, text: &str) -> Result<VoxelMap> {
    let mut lines = Lines::new(path, text);
    let h = lines.header(MAP_MAGIC, 4)?;
    let resolution = lines.float(h[2])?;
    let declared: usize = lines.int(h[3])?;
    let mut map = VoxelMap::new(resolution).map_err(|e| lines.err(e.to_string()))?;
    let mut found = 0;
    while let Some(l) = lines.next() {
        let f = lines.fields(l, &[3])?;
        let key = VoxelKey::new(lines.int(f[0])?, lines.int(f[1])?, lines.int(f[2])?);
        if !map.insert(key) {
            return Err(Error::DuplicateKey { path: path.to_path_buf(), line: lines.line, key: key.to_string() });
        }
        found += 1;
    }
    if found != declared {
        return Err(Error::CountMismatch { path: path.to_path_buf(), declared, found });
    }
    Ok(map)
}

pub fn read_map(path: &Path) -> Result<VoxelMap> {
    parse_map(path, &read_text(path)?)
}

pub fn write_map(path: &Path, map: &VoxelMap) -> Result<()> {
    write_text(path, &map_to_string(map))
}

/// Records sorted by `(frame, id)`.
pub fn tracks_to_string(records: &[TrackRecord]) -> String {
    let mut sorted: Vec<&TrackRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.frame, r.id));
    let mut s = String::with_capacity(80 * (records.len() + 1));
    writeln!(s, "{TRACKS_MAGIC} {VERSION}").unwrap();
    for r in sorted {
        let (a, b) = (r.bbox.min, r.bbox.max);
        writeln!(
            s,
            "{} {} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
            r.frame, r.id, a.x, a.y, a.z, b.x, b.y, b.z
        )
        .unwrap();
    }
    s
}

pub fn parse_tracks(path: &Path, text: &str) -> Result<Vec<TrackRecord>> {
    let mut lines = Lines::new(path, text);
    lines.header(TRACKS_MAGIC, 2)?;
    let mut seen: FxHashSet<(u32, u32)> = FxHashSet::default();
    let mut out = Vec::new();
    while let Some(l) = lines.next() {
        let f = lines.fields(l, &[8])?;
        let frame: u32 = lines.int(f[0])?;
        let id: u32 = lines.int(f[1])?;
        let v: Vec<f64> = f[2..].iter().map(|t| lines.float(t)).collect::<Result<_>>()?;
        let bbox = BoundingBox::new(Point3::new(v[0], v[1], v[2]), Point3::new(v[3], v[4], v[5]));
        if !bbox.is_valid() {
            return Err(lines.err("box minimum exceeds maximum"));
        }
        if !seen.insert((frame, id)) {
            return Err(Error::DuplicateKey {
                path: path.to_path_buf(),
                line: lines.line,
                key: format!("frame {frame} id {id}"),
            });
        }
        out.push(TrackRecord { frame, id, bbox });
    }
    Ok(out)
}

pub fn read_tracks(path: &Path) -> Result<Vec<TrackRecord>> {
    parse_tracks(path, &read_text(path)?)
}

pub fn write_tracks(path: &Path, records: &[TrackRecord]) -> Result<()> {
    write_text(path, &tracks_to_string(records))
}

/// `<dir>/scans/<index>.scan`, zero-padded to six digits.
pub fn scan_path(dir: &Path, index: usize) -> PathBuf {
    dir.join("scans").join(format!("{index:06}.scan"))
}
