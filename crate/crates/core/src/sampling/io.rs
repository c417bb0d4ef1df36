//! Binary sample-file format and CSV export.
//!
//! Layout (little-endian):
//!
//! ```text
//! "ATMQ"                      magic
//! u16                         format version
//! u32 + bytes                 canonical TOML of the resolved configuration
//! u32 + bytes                 comma-separated column names
//! u64                         record count
//! u32                         columns per record
//! f64 * count * columns       records, row-major
//! u32                         grid points n
//! f64 * n * n                 mean intensity (rows y, columns x)
//! f64 * n * n                 centroid-frame mean intensity
//! u64, u64                    displaced apertures attempted, skipped
//! u64                         CRC-64/ECMA-182 of all preceding bytes
//! ```

use std::io::Write;
use std::path::Path;

use crc::{Crc, CRC_64_ECMA_182};
use ndarray::Array2;

use super::{ChannelConfig, SampleRecord, SampleSet};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ATMQ";
pub const FORMAT_VERSION: u16 = 1;

const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_ECMA_182);

/// Column names of the stored record rows for `apertures` apertures and
/// `offsets` conditional offsets.
pub fn column_names(apertures: usize, offsets: usize) -> Vec<String> {
    let mut cols = vec!["index".to_string()];
    cols.extend((0..apertures).map(|i| format!("eta_R{i}")));
    cols.extend(["x0", "y0", "Sxx", "Sxy", "Syy"].map(String::from));
    cols.extend((0..apertures).map(|i| format!("etaT_R{i}")));
    cols.extend(["W1sq", "W2sq"].map(String::from));
    for i in 0..apertures {
        cols.extend((0..offsets).map(|k| format!("condEta_R{i}_{k}")));
    }
    for i in 0..apertures {
        cols.extend((0..offsets).map(|k| format!("condEta2_R{i}_{k}")));
    }
    cols
}

fn record_row(r: &SampleRecord) -> Vec<f64> {
    let mut row = Vec::with_capacity(8 + 2 * r.eta.len() + 2 * r.cond_eta.len());
    row.push(r.index as f64);
    row.extend(&r.eta);
    row.extend([r.x0, r.y0, r.sxx, r.sxy, r.syy]);
    row.extend(&r.eta_tracked);
    row.extend([r.w1sq, r.w2sq]);
    row.extend(&r.cond_eta);
    row.extend(&r.cond_eta_sq);
    row
}

fn row_record(row: &[f64], apertures: usize, offsets: usize) -> SampleRecord {
    let a = apertures;
    let c = apertures * offsets;
    let mut at = 1;
    let mut take = |len: usize| {
        let s = row[at..at + len].to_vec();
        at += len;
        s
    };
    let eta = take(a);
    let m = take(5);
    let eta_tracked = take(a);
    let w = take(2);
    let cond_eta = take(c);
    let cond_eta_sq = take(c);
    SampleRecord {
        index: row[0] as u64,
        eta,
        x0: m[0],
        y0: m[1],
        sxx: m[2],
        sxy: m[3],
        syy: m[4],
        eta_tracked,
        w1sq: w[0],
        w2sq: w[1],
        cond_eta,
        cond_eta_sq,
    }
}

/// Serializes a sample set into the binary format.
pub fn encode(set: &SampleSet) -> Result<Vec<u8>> {
    let apertures = set.config.aperture_radii.len();
    let offsets = set.config.conditional_offsets().len();
    let cols = column_names(apertures, offsets);
    let config_text = set.config.to_toml()?;
    let header = cols.join(",");
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for text in [&config_text, &header] {
        buf.extend_from_slice(&(text.len() as u32).to_le_bytes());
        buf.extend_from_slice(text.as_bytes());
    }
    buf.extend_from_slice(&(set.records.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(cols.len() as u32).to_le_bytes());
    for r in &set.records {
        let row = record_row(r);
        if row.len() != cols.len() {
            return Err(Error::Format(format!("record {} has {} columns, expected {}", r.index, row.len(), cols.len())));
        }
        for v in row {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let n = set.config.grid.points;
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    for grid in [&set.mean_intensity, &set.centroid_mean_intensity] {
        for v in grid.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf.extend_from_slice(&set.conditional_attempted.to_le_bytes());
    buf.extend_from_slice(&set.conditional_skipped.to_le_bytes());
    let crc = CRC64.checksum(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

struct Reader<'a> {
    data: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.at < n {
            return Err(Error::Format("unexpected end of file".into()));
        }
        let s = &self.data[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("length overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn text(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|e| Error::Format(format!("invalid text block: {e}")))
    }
}

/// Parses the binary format. Checks, in order: magic, version, checksum.
pub fn decode(data: &[u8]) -> Result<SampleSet> {
    if data.len() < 6 || &data[..4] != MAGIC {
        return Err(Error::Format("missing ATMQ magic bytes".into()));
    }
    let version = u16::from_le_bytes([data[4], data[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::Version { found: version, supported: FORMAT_VERSION });
    }
    if data.len() < 14 {
        let computed = CRC64.checksum(data);
        return Err(Error::Checksum { stored: 0, computed });
    }
    let (body, tail) = data.split_at(data.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    let computed = CRC64.checksum(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let mut r = Reader { data: body, at: 6 };
    let config = ChannelConfig::from_toml(&r.text()?)?;
    let header = r.text()?;
    let count = r.u64()? as usize;
    let ncols = r.u32()? as usize;
    let apertures = config.aperture_radii.len();
    let offsets = config.conditional_offsets().len();
    let expected = column_names(apertures, offsets);
    if ncols != expected.len() || header != expected.join(",") {
        return Err(Error::Format(format!("column layout mismatch: {header}")));
    }
    let values = r.f64s(count * ncols)?;
    let records = values.chunks_exact(ncols.max(1)).take(count).map(|row| row_record(row, apertures, offsets)).collect();
    let n = r.u32()? as usize;
    if n != config.grid.points {
        return Err(Error::Format(format!("accumulator size {n} does not match grid {}", config.grid.points)));
    }
    let mean = Array2::from_shape_vec((n, n), r.f64s(n * n)?).expect("sized");
    let centred = Array2::from_shape_vec((n, n), r.f64s(n * n)?).expect("sized");
    let attempted = r.u64()?;
    let skipped = r.u64()?;
    if r.at != body.len() {
        return Err(Error::Format("trailing bytes before checksum".into()));
    }
    Ok(SampleSet {
        config,
        records,
        mean_intensity: mean,
        centroid_mean_intensity: centred,
        conditional_attempted: attempted,
        conditional_skipped: skipped,
    })
}

pub fn save_samples(set: &SampleSet, path: &Path) -> Result<()> {
    std::fs::write(path, encode(set)?)?;
    Ok(())
}

pub fn load_samples(path: &Path) -> Result<SampleSet> {
    decode(&std::fs::read(path)?)
}

/// One CSV row per record with columns
/// `index,eta_R<i>,x0,y0,Sxx,Sxy,Syy,etaT_R<i>,W1sq,W2sq`.
pub fn export_csv<W: Write>(set: &SampleSet, mut out: W) -> Result<()> {
    let apertures = set.config.aperture_radii.len();
    let cols = column_names(apertures, 0);
    writeln!(out, "{}", cols.join(","))?;
    for r in &set.records {
        let row = record_row(&SampleRecord { cond_eta: Vec::new(), cond_eta_sq: Vec::new(), ..r.clone() });
        let mut line = format!("{}", r.index);
        for v in &row[1..] {
            line.push(',');
            line.push_str(&format!("{v:e}"));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::BeamSpec;
    use crate::sampling::{ConditionalSpec, RingSpec};
    use crate::screens::GridSpec;
    use crate::turbulence::{OpticalParams, TurbulenceParams};

    fn tiny_set() -> SampleSet {
        let config = ChannelConfig {
            name: "io".into(),
            beam: BeamSpec { w0: 0.01, f0: f64::INFINITY },
            turbulence: TurbulenceParams { cn2: 1e-14, inner_scale: 1e-3, outer_scale: 80.0 },
            optics: OpticalParams { wavelength: 808e-9 },
            path_length: 100.0,
            grid: GridSpec { points: 64, step: 1e-3 },
            screens: 1,
            rings: RingSpec::default(),
            aperture_radii: vec![0.01, 0.02],
            relative_apertures: vec![],
            samples: 2,
            master_seed: 1,
            tracked: true,
            absorbing_boundary: false,
            conditional: ConditionalSpec { offsets: 2, max_offset: Some(0.003), max_offset_wander_units: 5.5 },
            desk_scale: false,
        };
        let rec = |i: u64| SampleRecord {
            index: i,
            eta: vec![0.3 + i as f64 * 0.01, 0.7],
            x0: 1e-4,
            y0: -2e-4,
            sxx: 1e-4,
            sxy: 1e-6,
            syy: 2e-4,
            eta_tracked: vec![0.31, 0.71],
            w1sq: 2e-4,
            w2sq: 1e-4,
            cond_eta: vec![0.31, 0.2, 0.71, 0.6],
            cond_eta_sq: vec![0.1, 0.05, 0.5, 0.4],
        };
        SampleSet {
            config,
            records: vec![rec(0), rec(1)],
            mean_intensity: Array2::from_shape_fn((64, 64), |(j, i)| (i + j) as f64),
            centroid_mean_intensity: Array2::from_elem((64, 64), 0.5),
            conditional_attempted: 30,
            conditional_skipped: 1,
        }
    }

    #[test]
    fn round_trip_is_lossless() {
        let set = tiny_set();
        let bytes = encode(&set).unwrap();
        let back = decode(&bytes).unwrap();
        assert_eq!(back, set);
        assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn truncation_and_corruption_fail_checksum() {
        let bytes = encode(&tiny_set()).unwrap();
        assert!(matches!(decode(&bytes[..bytes.len() - 100]), Err(Error::Checksum { .. })));
        let mut flipped = bytes.clone();
        flipped[200] ^= 1;
        assert!(matches!(decode(&flipped), Err(Error::Checksum { .. })));
    }

    #[test]
    fn other_versions_are_rejected() {
        let mut bytes = encode(&tiny_set()).unwrap();
        bytes[4..6].copy_from_slice(&2u16.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::Version { found: 2, supported: 1 })));
        assert!(matches!(decode(b"NOPE\x01\x00"), Err(Error::Format(_))));
    }

    #[test]
    fn csv_has_documented_header() {
        let mut out = Vec::new();
        export_csv(&tiny_set(), &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "index,eta_R0,eta_R1,x0,y0,Sxx,Sxy,Syy,etaT_R0,etaT_R1,W1sq,W2sq");
        assert_eq!(lines.next().unwrap().split(',').count(), 12);
        assert_eq!(lines.count(), 1);
    }
}
