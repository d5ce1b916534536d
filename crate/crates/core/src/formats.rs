//! Little-endian binary files for scenes, maps, paired samples and shift geometry.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::envgrid::{OccupancyGrid, Scene, Transmitter};
use crate::error::{Error, Result};
use crate::featspace::ShiftGeometry;
use crate::radiomap::RadioMap;

pub const SCENE_MAGIC: &[u8; 4] = b"RFS1";
pub const MAP_MAGIC: &[u8; 4] = b"RFM1";
pub const GEOMETRY_MAGIC: &[u8; 4] = b"RFW1";

pub(crate) struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    pub(crate) fn new(inner: W) -> Self {
        Writer { inner }
    }

    pub(crate) fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.inner.write_all(b)?;
        Ok(())
    }

    pub(crate) fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in 32 bits")))?;
        self.bytes(&v.to_le_bytes())
    }

    pub(crate) fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub(crate) fn f64s(&mut self, vs: &[f64]) -> Result<()> {
        vs.iter().try_for_each(|&v| self.f64(v))
    }

    pub(crate) fn into_inner(self) -> W {
        self.inner
    }
}

pub(crate) struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    pub(crate) fn new(inner: R) -> Self {
        Reader { inner }
    }

    pub(crate) fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Format("file is truncated".into()),
            _ => Error::Io(e),
        })?;
        Ok(buf)
    }

    pub(crate) fn magic(&mut self, expect: &[u8; 4]) -> Result<()> {
        let got = self.bytes(4)?;
        if got != expect {
            return Err(Error::Format(format!(
                "expected magic {:?}, found {:?}",
                String::from_utf8_lossy(expect),
                String::from_utf8_lossy(&got)
            )));
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self) -> Result<usize> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        let b = self.bytes(8)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    /// Length guard against corrupt headers asking for absurd allocations.
    pub(crate) fn count(&mut self, limit: usize, what: &str) -> Result<usize> {
        let n = self.u32()?;
        if n > limit {
            return Err(Error::Format(format!("{what} count {n} exceeds {limit}")));
        }
        Ok(n)
    }

    pub(crate) fn finish(mut self) -> Result<()> {
        let mut extra = [0u8; 1];
        match self.inner.read(&mut extra)? {
            0 => Ok(()),
            _ => Err(Error::Format("trailing bytes after the last block".into())),
        }
    }
}

const MAX_CELLS: usize = 1 << 26;

fn write_scene_block<W: Write>(w: &mut Writer<W>, scene: &Scene) -> Result<()> {
    let g = &scene.grid;
    w.bytes(SCENE_MAGIC)?;
    w.u32(g.width())?;
    w.u32(g.height())?;
    w.f64(g.cell_size())?;
    w.f64(scene.tx.x)?;
    w.f64(scene.tx.y)?;
    w.f64(scene.tx.power)?;
    w.bytes(g.cells())
}

fn read_scene_block<R: Read>(r: &mut Reader<R>) -> Result<Scene> {
    r.magic(SCENE_MAGIC)?;
    let width = r.u32()?;
    let height = r.u32()?;
    if width * height > MAX_CELLS {
        return Err(Error::Format(format!("scene of {width}x{height} cells is too large")));
    }
    let cell_size = r.f64()?;
    let (x, y, power) = (r.f64()?, r.f64()?, r.f64()?);
    let cells = r.bytes(width * height)?;
    let grid = OccupancyGrid::new(width, height, cell_size, cells).map_err(|e| Error::Format(e.to_string()))?;
    Scene::new(grid, Transmitter { x, y, power }, 0, "").map_err(|e| Error::Format(e.to_string()))
}

fn write_map_block<W: Write>(w: &mut Writer<W>, map: &RadioMap) -> Result<()> {
    w.bytes(MAP_MAGIC)?;
    w.u32(map.width())?;
    w.u32(map.height())?;
    for &v in map.values() {
        w.bytes(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_map_block<R: Read>(r: &mut Reader<R>) -> Result<RadioMap> {
    r.magic(MAP_MAGIC)?;
    let width = r.u32()?;
    let height = r.u32()?;
    if width * height > MAX_CELLS {
        return Err(Error::Format(format!("map of {width}x{height} cells is too large")));
    }
    let raw = r.bytes(4 * width * height)?;
    let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
    RadioMap::from_values(width, height, values).map_err(|e| Error::Format(e.to_string()))
}

pub fn encode_scene(scene: &Scene) -> Vec<u8> {
    let mut w = Writer::new(Vec::new());
    write_scene_block(&mut w, scene).expect("writing to memory");
    w.inner
}

/// Decodes a scene file. Seed and tag are not part of the format and come back empty.
pub fn decode_scene(bytes: &[u8]) -> Result<Scene> {
    let mut r = Reader::new(bytes);
    let s = read_scene_block(&mut r)?;
    r.finish()?;
    Ok(s)
}

/// Map values are stored as 32-bit floats.
pub fn encode_map(map: &RadioMap) -> Vec<u8> {
    let mut w = Writer::new(Vec::new());
    write_map_block(&mut w, map).expect("writing to memory");
    w.inner
}

pub fn decode_map(bytes: &[u8]) -> Result<RadioMap> {
    let mut r = Reader::new(bytes);
    let m = read_map_block(&mut r)?;
    r.finish()?;
    Ok(m)
}

/// Main-path map, multipath map and scene of one paired sample.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub mp: RadioMap,
    pub mu: RadioMap,
    pub scene: Scene,
}

pub fn encode_pair(pair: &PairedSample) -> Vec<u8> {
    let mut w = Writer::new(Vec::new());
    write_map_block(&mut w, &pair.mp).expect("writing to memory");
    write_map_block(&mut w, &pair.mu).expect("writing to memory");
    write_scene_block(&mut w, &pair.scene).expect("writing to memory");
    w.inner
}

pub fn decode_pair(bytes: &[u8]) -> Result<PairedSample> {
    let mut r = Reader::new(bytes);
    let mp = read_map_block(&mut r)?;
    let mu = read_map_block(&mut r)?;
    let scene = read_scene_block(&mut r)?;
    r.finish()?;
    let (w, h) = (scene.grid.width(), scene.grid.height());
    if !mp.same_shape(&mu) || mp.width() != w || mp.height() != h {
        return Err(Error::Format("paired maps do not match the scene grid".into()));
    }
    Ok(PairedSample { mp, mu, scene })
}

/// Layout: magic, `d` (u32), `w` and `v` (`d` f64 each), `eta_bound` (f64),
/// sample count (u32), per-sample magnitudes (f64).
pub fn encode_geometry(g: &ShiftGeometry) -> Result<Vec<u8>> {
    if g.v.len() != g.w.len() {
        return Err(Error::arg("shift geometry vectors differ in length"));
    }
    let mut w = Writer::new(Vec::new());
    w.bytes(GEOMETRY_MAGIC)?;
    w.u32(g.w.len())?;
    w.f64s(&g.w)?;
    w.f64s(&g.v)?;
    w.f64(g.eta_bound)?;
    w.u32(g.per_sample_eta.len())?;
    w.f64s(&g.per_sample_eta)?;
    Ok(w.inner)
}

pub fn decode_geometry(bytes: &[u8]) -> Result<ShiftGeometry> {
    let mut r = Reader::new(bytes);
    r.magic(GEOMETRY_MAGIC)?;
    let d = r.count(1 << 20, "feature dimension")?;
    let w = r.f64s(d)?;
    let v = r.f64s(d)?;
    let eta_bound = r.f64()?;
    let n = r.count(1 << 24, "sample")?;
    let per_sample_eta = r.f64s(n)?;
    r.finish()?;
    Ok(ShiftGeometry { w, v, eta_bound, per_sample_eta })
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    Ok(fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene() -> Scene {
        let mut g = OccupancyGrid::empty(6, 5, 0.5).unwrap();
        g.fill_rect(2, 1, 4, 3);
        Scene::new(g, Transmitter { x: 0.7, y: 4.2, power: 1.0 }, 9, "x").unwrap()
    }

    #[test]
    fn scene_round_trip() {
        let s = scene();
        let bytes = encode_scene(&s);
        assert_eq!(&bytes[..4], b"RFS1");
        assert_eq!(bytes.len(), 4 + 8 + 32 + 30);
        let back = decode_scene(&bytes).unwrap();
        assert_eq!((back.grid, back.tx), (s.grid, s.tx));
    }

    #[test]
    fn map_round_trip_is_f32_exact() {
        let m = RadioMap::from_values(2, 3, vec![0.0, 0.5, 1.25, 3.0, 1e-3, 7.0]).unwrap();
        let bytes = encode_map(&m);
        assert_eq!(bytes.len(), 12 + 24);
        let back = decode_map(&bytes).unwrap();
        for (a, b) in back.values().iter().zip(m.values()) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn pair_and_geometry_round_trip() {
        let s = scene();
        let mp = RadioMap::filled(6, 5, 0.25).unwrap();
        let mu = RadioMap::filled(6, 5, 0.5).unwrap();
        let p = PairedSample { mp, mu, scene: s };
        let back = decode_pair(&encode_pair(&p)).unwrap();
        assert_eq!((back.mp, back.mu), (p.mp, p.mu));

        let g = ShiftGeometry { w: vec![3.0, 4.0], v: vec![0.6, 0.8], eta_bound: 0.1, per_sample_eta: vec![5.0, 4.5, 0.0] };
        let bytes = encode_geometry(&g).unwrap();
        assert_eq!(&bytes[..4], b"RFW1");
        assert_eq!(decode_geometry(&bytes).unwrap(), g);
    }

    #[test]
    fn corrupt_inputs_are_format_errors() {
        let bytes = encode_scene(&scene());
        assert!(matches!(decode_scene(&bytes[..20]), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_scene(&bad), Err(Error::Format(_))));
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(decode_scene(&extra), Err(Error::Format(_))));
    }
}
