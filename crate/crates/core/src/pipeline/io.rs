//! On-disk binary formats (all little-endian):
//!
//! - volume:      magic "SWV1", 3 x u32 extents, 3 x f32 voxel pitch (mm),
//!                f32 payload with x fastest;
//! - projections: magic "SWP1", u32 n_views, 2 x u32 detector dims,
//!                f32 angles, u8 semantic tag, f32 payload;
//! - weights:     magic "SWW1", 3 x u32 extents, 3 x u8 swap order,
//!                u8 variant, then per-block kernel/bias f32 payloads in
//!                declaration order.
//!
//! Loads are strict: bad magic, truncation, or trailing bytes reject the
//! whole file.

use crate::error::{Error, Result};
use crate::geometry::{ProjectionStack, StackKind, Volume};
use crate::swapnet::{Axis, SwapNetConfig, SwapNetWeights, Variant, BLOCKS, CONVS_PER_BLOCK};
use crate::tensor::Tensor;
use std::io::{Read, Write};
use std::path::Path;

const VOLUME_MAGIC: &[u8; 4] = b"SWV1";
const STACK_MAGIC: &[u8; 4] = b"SWP1";
const WEIGHTS_MAGIC: &[u8; 4] = b"SWW1";

struct Reader<R> {
    inner: R,
    what: &'static str,
}

impl<R: Read> Reader<R> {
    fn new(inner: R, what: &'static str) -> Self {
        Reader { inner, what }
    }

    fn bytes<const N: usize>(&mut self, field: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|_| {
            Error::Format(format!("{} file truncated while reading {field}", self.what))
        })?;
        Ok(buf)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes::<4>(field)?))
    }

    fn u8(&mut self, field: &str) -> Result<u8> {
        Ok(self.bytes::<1>(field)?[0])
    }

    fn f32(&mut self, field: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.bytes::<4>(field)?))
    }

    fn f32_vec(&mut self, count: usize, field: &str) -> Result<Vec<f32>> {
        let mut raw = vec![0u8; count * 4];
        self.inner.read_exact(&mut raw).map_err(|_| {
            Error::Format(format!("{} file truncated while reading {field}", self.what))
        })?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.bytes::<4>("magic")?;
        if &got != expected {
            return Err(Error::Format(format!(
                "{} file has magic {:?}, expected {:?}",
                self.what,
                String::from_utf8_lossy(&got),
                String::from_utf8_lossy(expected)
            )));
        }
        Ok(())
    }

    fn expect_eof(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe) {
            Ok(0) => Ok(()),
            Ok(_) => Err(Error::Format(format!(
                "{} file has trailing bytes after the payload",
                self.what
            ))),
            Err(e) => Err(Error::Io(e)),
        }
    }
}

fn write_f32s(w: &mut impl Write, values: &[f32]) -> Result<()> {
    let mut raw = Vec::with_capacity(values.len() * 4);
    for v in values {
        raw.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&raw)?;
    Ok(())
}

pub fn save_volume(vol: &Volume, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(VOLUME_MAGIC)?;
    for extent in [vol.nx, vol.ny, vol.nz] {
        w.write_all(&(extent as u32).to_le_bytes())?;
    }
    for _ in 0..3 {
        w.write_all(&(vol.voxel_mm as f32).to_le_bytes())?;
    }
    write_f32s(&mut w, &vol.values)?;
    w.flush()?;
    Ok(())
}

pub fn load_volume(path: &Path) -> Result<Volume> {
    let mut r = Reader::new(
        std::io::BufReader::new(std::fs::File::open(path)?),
        "volume",
    );
    r.magic(VOLUME_MAGIC)?;
    let nx = r.u32("nx")? as usize;
    let ny = r.u32("ny")? as usize;
    let nz = r.u32("nz")? as usize;
    let px = r.f32("pitch x")?;
    let py = r.f32("pitch y")?;
    let pz = r.f32("pitch z")?;
    if px != py || py != pz {
        return Err(Error::Format(format!(
            "volume pitch must be isotropic, got ({px}, {py}, {pz})"
        )));
    }
    let values = r.f32_vec(
        nx.checked_mul(ny)
            .and_then(|v| v.checked_mul(nz))
            .ok_or_else(|| Error::Format("volume extents overflow".into()))?,
        "voxel payload",
    )?;
    r.expect_eof()?;
    Volume::new(nx, ny, nz, px as f64, values)
}

pub fn save_stack(stack: &ProjectionStack, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(STACK_MAGIC)?;
    w.write_all(&(stack.n_views as u32).to_le_bytes())?;
    w.write_all(&(stack.rows as u32).to_le_bytes())?;
    w.write_all(&(stack.cols as u32).to_le_bytes())?;
    write_f32s(&mut w, &stack.angles_rad)?;
    w.write_all(&[stack.kind.tag()])?;
    write_f32s(&mut w, &stack.data)?;
    w.flush()?;
    Ok(())
}

pub fn load_stack(path: &Path) -> Result<ProjectionStack> {
    let mut r = Reader::new(std::io::BufReader::new(std::fs::File::open(path)?), "stack");
    r.magic(STACK_MAGIC)?;
    let n_views = r.u32("n_views")? as usize;
    let rows = r.u32("rows")? as usize;
    let cols = r.u32("cols")? as usize;
    let angles_rad = r.f32_vec(n_views, "angles")?;
    let kind = StackKind::from_tag(r.u8("kind tag")?)?;
    let data = r.f32_vec(
        n_views
            .checked_mul(rows)
            .and_then(|v| v.checked_mul(cols))
            .ok_or_else(|| Error::Format("stack extents overflow".into()))?,
        "pixel payload",
    )?;
    r.expect_eof()?;
    Ok(ProjectionStack {
        n_views,
        rows,
        cols,
        angles_rad,
        kind,
        data,
    })
}

fn axis_tag(axis: Axis) -> u8 {
    axis.index() as u8
}

fn axis_from_tag(tag: u8) -> Result<Axis> {
    match tag {
        0 => Ok(Axis::X),
        1 => Ok(Axis::Y),
        2 => Ok(Axis::Z),
        other => Err(Error::Format(format!("unknown axis tag {other}"))),
    }
}

pub fn save_weights(cfg: &SwapNetConfig, weights: &SwapNetWeights<f32>, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(WEIGHTS_MAGIC)?;
    let (nx, ny, nz) = cfg.extents;
    for extent in [nx, ny, nz] {
        w.write_all(&(extent as u32).to_le_bytes())?;
    }
    for axis in cfg.swap_order {
        w.write_all(&[axis_tag(axis)])?;
    }
    w.write_all(&[match cfg.variant {
        Variant::Swap => 0u8,
        Variant::NonSwap => 1u8,
    }])?;
    for block in &weights.blocks {
        for conv in 0..CONVS_PER_BLOCK {
            write_f32s(&mut w, block.kernels[conv].data())?;
            write_f32s(&mut w, block.biases[conv].data())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<(SwapNetConfig, SwapNetWeights<f32>)> {
    let mut r = Reader::new(
        std::io::BufReader::new(std::fs::File::open(path)?),
        "weights",
    );
    r.magic(WEIGHTS_MAGIC)?;
    let nx = r.u32("nx")? as usize;
    let ny = r.u32("ny")? as usize;
    let nz = r.u32("nz")? as usize;
    let swap_order = [
        axis_from_tag(r.u8("swap order 0")?)?,
        axis_from_tag(r.u8("swap order 1")?)?,
        axis_from_tag(r.u8("swap order 2")?)?,
    ];
    let variant = match r.u8("variant")? {
        0 => Variant::Swap,
        1 => Variant::NonSwap,
        other => return Err(Error::Format(format!("unknown variant tag {other}"))),
    };
    let cfg = SwapNetConfig::new((nx, ny, nz), swap_order, variant)
        .map_err(|e| Error::Format(format!("weights config invalid: {e}")))?;
    let mut blocks = Vec::with_capacity(BLOCKS);
    for block in 0..BLOCKS {
        let c = cfg.block_channels(block);
        let mut kernels = Vec::with_capacity(CONVS_PER_BLOCK);
        let mut biases = Vec::with_capacity(CONVS_PER_BLOCK);
        for conv in 0..CONVS_PER_BLOCK {
            let k = r.f32_vec(c * c * 9, "kernel payload")?;
            kernels.push(
                Tensor::new(vec![c, c, 3, 3], k)
                    .map_err(|e| Error::Format(format!("block {block} conv {conv}: {e}")))?,
            );
            let b = r.f32_vec(c, "bias payload")?;
            biases.push(
                Tensor::new(vec![c], b)
                    .map_err(|e| Error::Format(format!("block {block} conv {conv}: {e}")))?,
            );
        }
        blocks.push(crate::swapnet::BlockWeights { kernels, biases });
    }
    r.expect_eof()?;
    Ok((cfg, SwapNetWeights { blocks }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::swapnet::{init_weights, parse_swap_order};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tempdir() -> tempfile::TempDir {
        tempfile::tempdir().expect("temp dir")
    }

    #[test]
    fn volume_round_trip_is_bit_exact() {
        let dir = tempdir();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut vol = Volume::zeros(5, 6, 7, 0.05);
        for v in vol.values.iter_mut() {
            *v = rng.gen_range(-2.0..2.0);
        }
        let path = dir.path().join("vol.swv");
        save_volume(&vol, &path).unwrap();
        let back = load_volume(&path).unwrap();
        assert_eq!(back.values, vol.values);
        assert_eq!((back.nx, back.ny, back.nz), (5, 6, 7));
        assert_eq!(back.voxel_mm, 0.05_f32 as f64);
    }

    #[test]
    fn stack_round_trip_is_bit_exact() {
        let dir = tempdir();
        let geom = crate::geometry::ScanGeometry::desk_default(4);
        let mut stack = ProjectionStack::zeros(&geom, StackKind::PostLog);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for v in stack.data.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let path = dir.path().join("stack.swp");
        save_stack(&stack, &path).unwrap();
        let back = load_stack(&path).unwrap();
        assert_eq!(back, stack);
    }

    #[test]
    fn weights_round_trip_preserves_network_output_bitwise() {
        let dir = tempdir();
        let cfg = SwapNetConfig::new(
            (6, 7, 8),
            parse_swap_order("zxy").unwrap(),
            Variant::Swap,
        )
        .unwrap();
        let weights = init_weights(&cfg, 9);
        let path = dir.path().join("weights.sww");
        save_weights(&cfg, &weights, &path).unwrap();
        let (cfg2, weights2) = load_weights(&path).unwrap();
        assert_eq!(cfg2, cfg);
        assert_eq!(weights2, weights);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = Tensor::new(
            vec![6, 7, 8],
            (0..6 * 7 * 8).map(|_| rng.gen_range(-1.0_f32..1.0)).collect(),
        )
        .unwrap();
        let a = crate::swapnet::forward(&cfg, &weights, &input).unwrap();
        let b = crate::swapnet::forward(&cfg2, &weights2, &input).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempdir();
        let vol = Volume::zeros(4, 4, 4, 0.05);
        let path = dir.path().join("vol.swv");
        save_volume(&vol, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let cut = dir.path().join("cut.swv");
        std::fs::write(&cut, &bytes[..bytes.len() - 5]).unwrap();
        let err = load_volume(&cut).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn bad_magic_and_trailing_bytes_rejected() {
        let dir = tempdir();
        let vol = Volume::zeros(4, 4, 4, 0.05);
        let path = dir.path().join("vol.swv");
        save_volume(&vol, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();

        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        let bad = dir.path().join("bad.swv");
        std::fs::write(&bad, &wrong).unwrap();
        let err = load_volume(&bad).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");

        bytes.push(0);
        let trailing = dir.path().join("trail.swv");
        std::fs::write(&trailing, &bytes).unwrap();
        let err = load_volume(&trailing).unwrap_err();
        assert!(err.to_string().contains("trailing"), "{err}");
    }

    #[test]
    fn anisotropic_pitch_rejected() {
        let dir = tempdir();
        let vol = Volume::zeros(2, 2, 2, 0.05);
        let path = dir.path().join("vol.swv");
        save_volume(&vol, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // Overwrite pitch z (offset: magic 4 + extents 12 + 2 * f32).
        bytes[4 + 12 + 8..4 + 12 + 12].copy_from_slice(&0.1_f32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        let err = load_volume(&path).unwrap_err();
        assert!(err.to_string().contains("isotropic"), "{err}");
    }
}
