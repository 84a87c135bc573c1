use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Architecture, Scaling, SurrogateError, SurrogateNet};

pub const MODEL_MAGIC: &[u8; 8] = b"MCNETSUR";
pub const MODEL_VERSION: u32 = 2;

/// Magic, version, architecture, scaling, parameter count, then
/// little-endian doubles.
pub fn write_model<W: Write>(net: &SurrogateNet, mut w: W) -> Result<(), SurrogateError> {
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    for v in [net.arch.input_dim, net.arch.channels, net.arch.conv_count] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    w.write_all(&[net.arch.final_relu as u8])?;
    let sc = &net.scaling;
    for (mean, std) in [(&sc.input_mean, sc.input_std), (&sc.output_mean, sc.output_std)] {
        w.write_all(&(mean.len() as u64).to_le_bytes())?;
        for v in mean.iter().chain([&std]) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.write_all(&(net.params.len() as u64).to_le_bytes())?;
    for p in &net.params {
        w.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

fn read_exact<R: Read, const N: usize>(r: &mut R, what: &str) -> Result<[u8; N], SurrogateError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => SurrogateError::Format(format!("truncated while reading {what}")),
        _ => SurrogateError::Io(e),
    })?;
    Ok(buf)
}

fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64, SurrogateError> {
    Ok(u64::from_le_bytes(read_exact::<_, 8>(r, what)?))
}

pub fn read_model<R: Read>(mut r: R) -> Result<SurrogateNet, SurrogateError> {
    let magic = read_exact::<_, 8>(&mut r, "magic")?;
    if &magic != MODEL_MAGIC {
        return Err(SurrogateError::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(read_exact::<_, 4>(&mut r, "version")?);
    if version != MODEL_VERSION {
        return Err(SurrogateError::Format(format!(
            "unsupported version {version}, expected {MODEL_VERSION}"
        )));
    }
    let input_dim = read_u64(&mut r, "input_dim")? as usize;
    let channels = read_u64(&mut r, "channels")? as usize;
    let conv_count = read_u64(&mut r, "conv_count")? as usize;
    let final_relu = match read_exact::<_, 1>(&mut r, "final_relu")?[0] {
        0 => false,
        1 => true,
        b => return Err(SurrogateError::Format(format!("bad final_relu flag {b}"))),
    };
    let arch = Architecture {
        input_dim,
        channels,
        conv_count,
        final_relu,
    };
    arch.validate().map_err(|e| SurrogateError::Format(e.to_string()))?;
    let mut read_side = |limit: usize| -> Result<(Vec<f64>, f64), SurrogateError> {
        let len = read_u64(&mut r, "scaling")? as usize;
        if len != 0 && len != limit {
            return Err(SurrogateError::Format(format!("scaling mean of length {len}, expected {limit}")));
        }
        let mut vals = Vec::with_capacity(len + 1);
        for _ in 0..=len {
            vals.push(f64::from_le_bytes(read_exact::<_, 8>(&mut r, "scaling")?));
        }
        let std = vals.pop().expect("at least one value");
        Ok((vals, std))
    };
    let (input_mean, input_std) = read_side(input_dim)?;
    let (output_mean, output_std) = read_side(super::PLANE)?;
    let scaling = Scaling {
        input_mean,
        input_std,
        output_mean,
        output_std,
    };
    scaling
        .validate(input_dim)
        .map_err(|e| SurrogateError::Format(e.to_string()))?;
    let count = read_u64(&mut r, "parameter count")? as usize;
    if count != arch.param_count() {
        return Err(SurrogateError::Format(format!(
            "parameter count {count} does not match architecture ({})",
            arch.param_count()
        )));
    }
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        params.push(f64::from_le_bytes(read_exact::<_, 8>(&mut r, "parameters")?));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(SurrogateError::Format("trailing bytes after parameters".into()));
    }
    let mut net = SurrogateNet::from_params(arch, params)?;
    net.scaling = scaling;
    Ok(net)
}

pub fn save_model(net: &SurrogateNet, path: &Path) -> Result<(), SurrogateError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(net, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<SurrogateNet, SurrogateError> {
    read_model(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bytes(net: &SurrogateNet) -> Vec<u8> {
        let mut buf = Vec::new();
        write_model(net, &mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip_bitwise() {
        let mut arch = Architecture::new(11, 3);
        arch.conv_count = 6;
        arch.final_relu = true;
        let mut net = SurrogateNet::he_init(arch, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        net.scaling = Scaling {
            input_mean: (0..11).map(|i| i as f64 * 0.1).collect(),
            input_std: 0.25,
            output_mean: vec![-0.1; crate::surrogate::PLANE],
            output_std: 3.0,
        };
        let back = read_model(bytes(&net).as_slice()).unwrap();
        assert_eq!(back.arch, net.arch);
        assert_eq!(back.scaling, net.scaling);
        assert!(back.params.iter().zip(&net.params).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn truncated_and_versioned() {
        let net = SurrogateNet::he_init(Architecture::new(4, 2), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = bytes(&net);
        for cut in [0, 5, 12, 30, b.len() - 1] {
            assert!(matches!(read_model(&b[..cut]), Err(SurrogateError::Format(_))), "cut {cut}");
        }
        let mut v = b.clone();
        v[8..12].copy_from_slice(&(MODEL_VERSION + 1).to_le_bytes());
        let err = read_model(v.as_slice()).expect_err("version mismatch rejected");
        assert!(err.to_string().contains("version"));
        let mut m = b.clone();
        m[0] = b'X';
        assert!(read_model(m.as_slice()).is_err());
        let mut extra = b;
        extra.push(0);
        assert!(read_model(extra.as_slice()).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let net = SurrogateNet::he_init(Architecture::new(5, 2), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        save_model(&net, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), net);
    }
}
