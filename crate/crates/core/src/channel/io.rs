//! `.chset` persistence.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic "MINNCHST" | version u32 | n_r u32 | n_t u32 | n_m u32 | count u64 | seed u64
//! wavelength, κ_D, κ_1, κ_2, exponent, reference_loss : f64 × 6
//! count × { frame u64 | H_D | H_1 | H_2 }      matrices row-major as (re, im) f64 pairs
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ChannelRealization, ChannelSet, FadingParams};
use crate::error::{Error, Result};
use crate::numerics::{CMatrix, C64};

pub const CHSET_MAGIC: &[u8; 8] = b"MINNCHST";
pub const CHSET_VERSION: u32 = 1;

pub fn save_channel_set(set: &ChannelSet, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_set(set, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_set<W: Write>(set: &ChannelSet, w: &mut W) -> std::io::Result<()> {
    let (nr, nt, nm) = set.dims();
    w.write_all(CHSET_MAGIC)?;
    w.write_all(&CHSET_VERSION.to_le_bytes())?;
    for d in [nr, nt, nm] {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    w.write_all(&(set.len() as u64).to_le_bytes())?;
    w.write_all(&set.seed().to_le_bytes())?;
    let p = set.params();
    for v in [
        p.wavelength,
        p.kappa_direct_db,
        p.kappa_tx_ms_db,
        p.kappa_ms_rx_db,
        p.pathloss_exponent,
        p.reference_loss_db,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for h in set.realizations() {
        w.write_all(&h.frame.to_le_bytes())?;
        for m in [&h.h_d, &h.h_1, &h.h_2] {
            for z in m.as_slice() {
                w.write_all(&z.re.to_le_bytes())?;
                w.write_all(&z.im.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn load_channel_set(path: &Path) -> Result<ChannelSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        inner: BufReader::new(file),
        path,
    };
    let mut magic = [0u8; 8];
    r.bytes(&mut magic)?;
    if &magic != CHSET_MAGIC {
        return Err(Error::format(path, "not a channel-set file (bad magic)"));
    }
    let version = r.u32()?;
    if version != CHSET_VERSION {
        return Err(Error::format(path, format!("unsupported channel-set version {version}")));
    }
    let nr = r.u32()? as usize;
    let nt = r.u32()? as usize;
    let nm = r.u32()? as usize;
    let count = r.u64()?;
    let seed = r.u64()?;
    let mut f = [0.0; 6];
    for v in f.iter_mut() {
        *v = r.f64()?;
    }
    let params = FadingParams {
        wavelength: f[0],
        kappa_direct_db: f[1],
        kappa_tx_ms_db: f[2],
        kappa_ms_rx_db: f[3],
        pathloss_exponent: f[4],
        reference_loss_db: f[5],
    };
    if count == 0 || nr == 0 || nt == 0 || nm == 0 {
        return Err(Error::format(path, "empty channel set or zero dimension"));
    }
    let mut realizations = Vec::with_capacity(count.min(1 << 20) as usize);
    for _ in 0..count {
        let frame = r.u64()?;
        let h_d = r.matrix(nr, nt)?;
        let h_1 = r.matrix(nt, nm)?;
        let h_2 = r.matrix(nr, nm)?;
        realizations.push(ChannelRealization { h_d, h_1, h_2, frame });
    }
    let mut probe = [0u8; 1];
    if r.inner.read(&mut probe).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::format(path, "trailing bytes after last realization"));
    }
    ChannelSet::new(realizations, seed, params)
}

struct Reader<'a, R> {
    inner: R,
    path: &'a Path,
}

impl<R: Read> Reader<'_, R> {
    fn bytes(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::format(self.path, "truncated channel-set file")
            } else {
                Error::io(self.path, e)
            }
        })
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.bytes(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.bytes(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.bytes(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<CMatrix> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            let re = self.f64()?;
            let im = self.f64()?;
            data.push(C64::new(re, im));
        }
        CMatrix::from_vec(rows, cols, data)
    }
}
