//! Labeled point clouds and their on-disk formats.
//!
//! Binary (`.svpc`, little-endian):
//!
//! ```text
//! "SVPC" | u16 version = 1 | u64 count
//! count x { f64 x, y, z | u32 instance | u8 semantic | u8 return | i64 pulse | f64 time }
//! ```
//!
//! ASCII: a `# sylva-pc v1` header line, then `x y z instance semantic return`
//! per point with positions at six decimals.

use std::fmt;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Rect, Vec3};
use crate::labels::Semantic;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LidarPoint {
    pub position: Vec3,
    pub instance_id: u32,
    pub semantic: Semantic,
    /// 1-based within the pulse; 0 for nodal points.
    pub return_number: u8,
    /// -1 for nodal points.
    pub pulse_index: i64,
    pub time: f64,
}

impl LidarPoint {
    pub fn nodal(position: Vec3, instance_id: u32, semantic: Semantic) -> Self {
        LidarPoint {
            position,
            instance_id,
            semantic,
            return_number: 0,
            pulse_index: -1,
            time: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    #[default]
    Simulated,
    Nodal,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Simulated => "simulated",
            Provenance::Nodal => "nodal",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub points: Vec<LidarPoint>,
    pub extent: Rect,
    pub provenance: Provenance,
}

impl PointCloud {
    /// Cloud whose extent is `extent` grown to cover every point.
    pub fn new(points: Vec<LidarPoint>, extent: Rect, provenance: Provenance) -> Self {
        let extent = match points_bbox(&points) {
            Some(b) => Rect::new(
                extent.min_x.min(b.min_x),
                extent.min_y.min(b.min_y),
                extent.max_x.max(b.max_x),
                extent.max_y.max(b.max_y),
            ),
            None => extent,
        };
        PointCloud {
            points,
            extent,
            provenance,
        }
    }

    /// Cloud whose extent is the xy bounding box of its points.
    pub fn from_points(points: Vec<LidarPoint>, provenance: Provenance) -> Self {
        let extent = points_bbox(&points).unwrap_or_else(|| Rect::new(0.0, 0.0, 0.0, 0.0));
        PointCloud {
            points,
            extent,
            provenance,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Points per square meter of extent (0 for a degenerate extent).
    pub fn density(&self) -> f64 {
        let a = self.extent.area();
        if a > 0.0 {
            self.points.len() as f64 / a
        } else {
            0.0
        }
    }
}

fn points_bbox(points: &[LidarPoint]) -> Option<Rect> {
    Rect::bounding(points.iter().map(|p| [p.position.x, p.position.y]))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloudFormat {
    #[default]
    Binary,
    Ascii,
}

impl CloudFormat {
    pub fn extension(self) -> &'static str {
        match self {
            CloudFormat::Binary => "svpc",
            CloudFormat::Ascii => "txt",
        }
    }

    /// `.svpc` is binary, anything else ASCII.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("svpc") => CloudFormat::Binary,
            _ => CloudFormat::Ascii,
        }
    }
}

impl FromStr for CloudFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" | "svpc" => Ok(CloudFormat::Binary),
            "ascii" | "txt" => Ok(CloudFormat::Ascii),
            other => Err(Error::Config(format!("unknown cloud format '{other}' (binary|ascii)"))),
        }
    }
}

pub const CLOUD_MAGIC: &[u8; 4] = b"SVPC";
pub const CLOUD_VERSION: u16 = 1;
pub const RECORD_BYTES: usize = 46;
pub const ASCII_HEADER: &str = "# sylva-pc v1";

pub fn write_binary<W: Write>(points: &[LidarPoint], mut w: W) -> std::io::Result<()> {
    w.write_all(CLOUD_MAGIC)?;
    w.write_all(&CLOUD_VERSION.to_le_bytes())?;
    w.write_all(&(points.len() as u64).to_le_bytes())?;
    let mut rec = [0u8; RECORD_BYTES];
    for p in points {
        rec[0..8].copy_from_slice(&p.position.x.to_le_bytes());
        rec[8..16].copy_from_slice(&p.position.y.to_le_bytes());
        rec[16..24].copy_from_slice(&p.position.z.to_le_bytes());
        rec[24..28].copy_from_slice(&p.instance_id.to_le_bytes());
        rec[28] = p.semantic.code();
        rec[29] = p.return_number;
        rec[30..38].copy_from_slice(&p.pulse_index.to_le_bytes());
        rec[38..46].copy_from_slice(&p.time.to_le_bytes());
        w.write_all(&rec)?;
    }
    Ok(())
}

pub fn read_binary(bytes: &[u8], source_name: &str) -> Result<Vec<LidarPoint>> {
    let mut cur = ByteCursor::new(bytes, source_name);
    if cur.take(4)? != CLOUD_MAGIC {
        return Err(cur.error_at(0, "bad magic, expected SVPC"));
    }
    let version = cur.u16()?;
    if version != CLOUD_VERSION {
        return Err(cur.error_at(4, &format!("unsupported version {version}")));
    }
    let count = cur.u64()?;
    let need = count.checked_mul(RECORD_BYTES as u64);
    let have = cur.remaining() as u64;
    if need != Some(have) {
        let msg = format!("header declares {count} points but {have} record bytes follow");
        let at = if need.is_some_and(|n| have > n) {
            cur.offset() + need.unwrap_or(0)
        } else {
            cur.offset() + have - have % RECORD_BYTES as u64
        };
        return Err(cur.error_at(at, &msg));
    }
    let mut points = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let at = cur.offset();
        let position = Vec3::new(cur.f64()?, cur.f64()?, cur.f64()?);
        let instance_id = cur.u32()?;
        let code = cur.u8()?;
        let return_number = cur.u8()?;
        let pulse_index = cur.i64()?;
        let time = cur.f64()?;
        let semantic = Semantic::from_code(code)
            .ok_or_else(|| cur.error_at(at + 28, &format!("unknown semantic code {code}")))?;
        points.push(LidarPoint {
            position,
            instance_id,
            semantic,
            return_number,
            pulse_index,
            time,
        });
    }
    Ok(points)
}

pub fn format_ascii(points: &[LidarPoint]) -> String {
    use std::fmt::Write as _;
    let mut out = String::with_capacity(points.len() * 40 + 16);
    out.push_str(ASCII_HEADER);
    out.push('\n');
    for p in points {
        let _ = writeln!(out, "{}", ascii_line(p));
    }
    out
}

pub fn ascii_line(p: &LidarPoint) -> String {
    format!(
        "{:.6} {:.6} {:.6} {} {} {}",
        p.position.x,
        p.position.y,
        p.position.z,
        p.instance_id,
        p.semantic.code(),
        p.return_number
    )
}

/// Parses the ASCII format. Pulse indices and times are not stored there,
/// so they come back as -1 and 0.
pub fn parse_ascii(text: &str, source_name: &str) -> Result<Vec<LidarPoint>> {
    let err = |line: usize, message: String| Error::ParseText {
        source_name: source_name.to_string(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == ASCII_HEADER => {}
        _ => return Err(err(1, format!("missing header '{ASCII_HEADER}'"))),
    }
    let mut points = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(err(line_no, format!("expected 6 fields, found {}", f.len())));
        }
        let num = |k: usize| -> Result<f64> {
            f[k].parse::<f64>()
                .map_err(|_| err(line_no, format!("bad number '{}'", f[k])))
        };
        let int = |k: usize| -> Result<u32> {
            f[k].parse::<u32>()
                .map_err(|_| err(line_no, format!("bad integer '{}'", f[k])))
        };
        let code = int(4)?;
        let semantic = u8::try_from(code)
            .ok()
            .and_then(Semantic::from_code)
            .ok_or_else(|| err(line_no, format!("unknown semantic code {code}")))?;
        let ret = int(5)?;
        let return_number = u8::try_from(ret).map_err(|_| err(line_no, format!("return {ret} out of range")))?;
        points.push(LidarPoint {
            position: Vec3::new(num(0)?, num(1)?, num(2)?),
            instance_id: int(3)?,
            semantic,
            return_number,
            pulse_index: -1,
            time: 0.0,
        });
    }
    Ok(points)
}

pub fn write_cloud(cloud: &PointCloud, path: &Path, format: CloudFormat) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let res = match format {
        CloudFormat::Binary => write_binary(&cloud.points, &mut w),
        CloudFormat::Ascii => w.write_all(format_ascii(&cloud.points).as_bytes()),
    };
    res.and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Reads either format, detected by magic bytes. The extent becomes the
/// points' bounding box; a non-empty cloud whose points all lack a pulse
/// is taken to be nodal.
pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    let points = if bytes.starts_with(CLOUD_MAGIC) {
        read_binary(&bytes, &name)?
    } else {
        let text = std::str::from_utf8(&bytes).map_err(|e| Error::ParseBinary {
            source_name: name.clone(),
            offset: e.valid_up_to() as u64,
            message: "neither SVPC binary nor UTF-8 text".into(),
        })?;
        parse_ascii(text, &name)?
    };
    let provenance = if !points.is_empty() && points.iter().all(|p| p.pulse_index == -1 && p.return_number == 0) {
        Provenance::Nodal
    } else {
        Provenance::Simulated
    };
    Ok(PointCloud::from_points(points, provenance))
}

/// Little-endian reader that reports failures with byte offsets.
pub(crate) struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    source_name: &'a str,
}

impl<'a> ByteCursor<'a> {
    pub(crate) fn new(bytes: &'a [u8], source_name: &'a str) -> Self {
        ByteCursor {
            bytes,
            pos: 0,
            source_name,
        }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn error_at(&self, offset: u64, message: &str) -> Error {
        Error::ParseBinary {
            source_name: self.source_name.to_string(),
            offset,
            message: message.to_string(),
        }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(self.error_at(
                self.pos as u64,
                &format!("truncated: need {n} bytes, {} left", self.remaining()),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn expect_end(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(self.error_at(self.pos as u64, &format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N)?);
        Ok(a)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        self.array().map(u16::from_le_bytes)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_le_bytes)
    }

    pub(crate) fn i32(&mut self) -> Result<i32> {
        self.array().map(i32::from_le_bytes)
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        self.array().map(u64::from_le_bytes)
    }

    pub(crate) fn i64(&mut self) -> Result<i64> {
        self.array().map(i64::from_le_bytes)
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        self.array().map(f32::from_le_bytes)
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        self.array().map(f64::from_le_bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<LidarPoint> {
        vec![
            LidarPoint {
                position: Vec3::new(12.345678, 0.1, 3.0),
                instance_id: 42,
                semantic: Semantic::Leaf,
                return_number: 1,
                pulse_index: 7,
                time: 0.25,
            },
            LidarPoint {
                position: Vec3::new(-1.0 / 3.0, 2.0f64.sqrt(), 1e-300),
                instance_id: 0,
                semantic: Semantic::Ground,
                return_number: 2,
                pulse_index: 7,
                time: 0.25,
            },
        ]
    }

    #[test]
    fn ascii_line_format() {
        assert_eq!(ascii_line(&sample()[0]), "12.345678 0.100000 3.000000 42 2 1");
    }

    #[test]
    fn binary_round_trip_is_bitwise() {
        let pts = sample();
        let mut buf = Vec::new();
        write_binary(&pts, &mut buf).unwrap();
        assert_eq!(buf.len(), 14 + 2 * RECORD_BYTES);
        let back = read_binary(&buf, "mem").unwrap();
        for (a, b) in pts.iter().zip(&back) {
            assert_eq!(a.position.x.to_bits(), b.position.x.to_bits());
            assert_eq!(a.position.y.to_bits(), b.position.y.to_bits());
            assert_eq!(a.position.z.to_bits(), b.position.z.to_bits());
            assert_eq!(a.time.to_bits(), b.time.to_bits());
        }
        assert_eq!(back, pts);
    }

    #[test]
    fn truncated_binary_reports_offset() {
        let mut buf = Vec::new();
        write_binary(&sample(), &mut buf).unwrap();
        buf.truncate(buf.len() - 5);
        match read_binary(&buf, "t").unwrap_err() {
            Error::ParseBinary { offset, .. } => assert_eq!(offset, 14 + RECORD_BYTES as u64),
            e => panic!("{e}"),
        }
        match read_binary(b"SVPX\x01\x00", "t").unwrap_err() {
            Error::ParseBinary { offset, .. } => assert_eq!(offset, 0),
            e => panic!("{e}"),
        }
        assert!(read_binary(&buf[..10], "t").is_err());
    }

    #[test]
    fn ascii_round_trip_labels() {
        let pts = sample();
        let back = parse_ascii(&format_ascii(&pts), "a").unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in pts.iter().zip(&back) {
            assert_eq!((a.instance_id, a.semantic, a.return_number), (b.instance_id, b.semantic, b.return_number));
            assert!((a.position - b.position).amax() <= 5e-7);
        }
    }

    #[test]
    fn ascii_errors_carry_line() {
        let text = format!("{ASCII_HEADER}\n1 2 3 4 2 1\n1 2 3 4 99 1\n");
        match parse_ascii(&text, "a").unwrap_err() {
            Error::ParseText { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
        assert!(parse_ascii("1 2 3 4 2 1\n", "a").is_err());
    }

    #[test]
    fn file_round_trip_and_provenance() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.svpc");
        let cloud = PointCloud::from_points(sample(), Provenance::Simulated);
        write_cloud(&cloud, &path, CloudFormat::Binary).unwrap();
        let back = read_cloud(&path).unwrap();
        assert_eq!(back, cloud);

        let nodal = PointCloud::from_points(
            vec![LidarPoint::nodal(Vec3::new(1.0, 2.0, 3.0), 5, Semantic::Wood)],
            Provenance::Nodal,
        );
        let path = dir.path().join("n.txt");
        write_cloud(&nodal, &path, CloudFormat::Ascii).unwrap();
        assert_eq!(read_cloud(&path).unwrap().provenance, Provenance::Nodal);
    }

    #[test]
    fn extent_covers_points() {
        let c = PointCloud::new(sample(), Rect::from_size(5.0, 5.0), Provenance::Simulated);
        assert!(c.extent.min_x < 0.0);
        assert!(c.extent.max_x >= 12.345678);
        assert_eq!(c.extent.max_y, 5.0);
    }
}
