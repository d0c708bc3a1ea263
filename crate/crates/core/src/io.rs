//! File formats: observations, 16-bit PGM, raw f64 dumps, Radon triplets.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::operators::SparseOperator;
use crate::poisson::{ModelSummary, Observation};

/// C `printf("%.17g", v)`.
pub fn format_g17(v: f64) -> String {
    const P: i32 = 17;
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.*e}", (P - 1) as usize, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let x: i32 = exp.parse().expect("exponent");
    if (-4..P).contains(&x) {
        let fixed = format!("{:.*}", (P - 1 - x) as usize, v);
        strip_zeros(&fixed).to_string()
    } else {
        let sign = if x < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", strip_zeros(mantissa), sign, x.abs())
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

const OBSERVATION_MAGIC: &str = "# pwp observation v1";

/// Header lines followed by one row of counts per line.
pub fn write_observation<W: Write>(obs: &Observation, mut w: W) -> std::io::Result<()> {
    let (r, c) = obs.counts.dim();
    writeln!(w, "{OBSERVATION_MAGIC}")?;
    writeln!(w, "shape {r} {c}")?;
    writeln!(w, "model {}", obs.model.kind)?;
    writeln!(w, "counts {}", format_g17(obs.model.counts))?;
    writeln!(w, "background {}", format_g17(obs.model.background))?;
    writeln!(w, "seed {}", obs.seed)?;
    writeln!(w, "data")?;
    for row in obs.counts.rows() {
        let line: Vec<String> = row.iter().map(u64::to_string).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn save_observation(path: &Path, obs: &Observation) -> Result<()> {
    let mut w = create(path)?;
    write_observation(obs, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_observation(path: &Path) -> Result<Observation> {
    let reader = open(path)?;
    let mut lines = reader.lines();
    let mut next = || -> Result<String> {
        match lines.next() {
            Some(Ok(l)) => Ok(l),
            Some(Err(e)) => Err(Error::io(path, e)),
            None => Err(parse_err(path, "unexpected end of file")),
        }
    };
    if next()?.trim() != OBSERVATION_MAGIC {
        return Err(parse_err(path, "missing observation header"));
    }
    let mut shape = None;
    let mut kind = None;
    let mut counts = None;
    let mut background = None;
    let mut seed = None;
    loop {
        let line = next()?;
        let line = line.trim();
        if line == "data" {
            break;
        }
        let (key, val) = line
            .split_once(' ')
            .ok_or_else(|| parse_err(path, format!("bad header line `{line}`")))?;
        let bad = |what: &str| parse_err(path, format!("bad {what} `{val}`"));
        match key {
            "shape" => {
                let mut it = val.split_whitespace().map(str::parse::<usize>);
                match (it.next(), it.next()) {
                    (Some(Ok(r)), Some(Ok(c))) => shape = Some((r, c)),
                    _ => return Err(bad("shape")),
                }
            }
            "model" => kind = Some(val.trim().parse().map_err(|_| bad("model"))?),
            "counts" => counts = Some(val.trim().parse::<f64>().map_err(|_| bad("counts"))?),
            "background" => background = Some(val.trim().parse::<f64>().map_err(|_| bad("background"))?),
            "seed" => seed = Some(val.trim().parse::<u64>().map_err(|_| bad("seed"))?),
            _ => return Err(parse_err(path, format!("unknown header key `{key}`"))),
        }
    }
    let missing = |k: &str| parse_err(path, format!("missing `{k}`"));
    let (r, c) = shape.ok_or_else(|| missing("shape"))?;
    let mut data = Vec::with_capacity(r * c);
    for i in 0..r {
        let line = next()?;
        let before = data.len();
        for tok in line.split_whitespace() {
            data.push(
                tok.parse::<u64>()
                    .map_err(|_| parse_err(path, format!("bad count `{tok}` in row {i}")))?,
            );
        }
        if data.len() - before != c {
            return Err(parse_err(path, format!("row {i} has {} entries, expected {c}", data.len() - before)));
        }
    }
    Ok(Observation {
        counts: Array2::from_shape_vec((r, c), data).expect("shape checked"),
        model: ModelSummary {
            kind: kind.ok_or_else(|| missing("model"))?,
            counts: counts.ok_or_else(|| missing("counts"))?,
            background: background.ok_or_else(|| missing("background"))?,
        },
        seed: seed.ok_or_else(|| missing("seed"))?,
    })
}

/// Binary 16-bit PGM. Values are mapped linearly from `[0, max]` to
/// `[0, 65535]` and clamped; `max = None` uses the image maximum.
pub fn save_pgm16(path: &Path, img: &Array2<f64>, max: Option<f64>) -> Result<()> {
    let (r, c) = img.dim();
    let top = max.unwrap_or_else(|| img.iter().cloned().fold(0.0, f64::max));
    let scale = if top > 0.0 { 65535.0 / top } else { 0.0 };
    let mut w = create(path)?;
    let mut body = Vec::with_capacity(2 * r * c);
    for &v in img.iter() {
        let q = (v * scale).round().clamp(0.0, 65535.0) as u16;
        body.extend_from_slice(&q.to_be_bytes());
    }
    write!(w, "P5\n{c} {r}\n65535\n")
        .and_then(|_| w.write_all(&body))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Reads an 8- or 16-bit PGM (`P2` or `P5`) scaled to `[0, 1]` by maxval.
pub fn load_pgm(path: &Path) -> Result<Array2<f64>> {
    let mut bytes = Vec::new();
    open(path)?.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    let mut pos = 0;
    let mut token = || -> Option<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        (pos > start).then(|| String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token().ok_or_else(|| parse_err(path, "empty file"))?;
    let mut num = |what: &str| -> Result<usize> {
        token()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| parse_err(path, format!("bad {what}")))
    };
    let c = num("width")?;
    let r = num("height")?;
    let maxval = num("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(parse_err(path, "maxval out of range"));
    }
    let n = r * c;
    let values: Vec<f64> = match magic.as_str() {
        "P2" => (0..n).map(|_| num("pixel").map(|v| v as f64)).collect::<Result<_>>()?,
        "P5" => {
            let data = &bytes[pos + 1..];
            let width = if maxval > 255 { 2 } else { 1 };
            if data.len() < n * width {
                return Err(parse_err(path, "truncated pixel data"));
            }
            (0..n)
                .map(|i| {
                    if width == 2 {
                        u16::from_be_bytes([data[2 * i], data[2 * i + 1]]) as f64
                    } else {
                        data[i] as f64
                    }
                })
                .collect()
        }
        other => return Err(parse_err(path, format!("unsupported PGM magic `{other}`"))),
    };
    let scale = 1.0 / maxval as f64;
    Ok(Array2::from_shape_vec((r, c), values).expect("shape").mapv(|v| v * scale))
}

/// Row-major little-endian f64 dump.
pub fn save_raw_f64(path: &Path, img: &Array2<f64>) -> Result<()> {
    let mut w = create(path)?;
    let mut body = Vec::with_capacity(8 * img.len());
    for &v in img.iter() {
        body.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&body).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn load_raw_f64(path: &Path, shape: (usize, usize)) -> Result<Array2<f64>> {
    let mut bytes = Vec::new();
    open(path)?.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() != 8 * shape.0 * shape.1 {
        return Err(parse_err(path, format!("expected {} bytes, found {}", 8 * shape.0 * shape.1, bytes.len())));
    }
    let v = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    Ok(Array2::from_shape_vec(shape, v).expect("shape"))
}

/// One `row col value` line per stored entry, 0-based.
pub fn write_triplets<W: Write>(op: &SparseOperator, mut w: W) -> std::io::Result<()> {
    for (r, c, v) in op.triplets() {
        writeln!(w, "{r} {c} {}", format_g17(v))?;
    }
    Ok(())
}

pub fn save_triplets(path: &Path, op: &SparseOperator) -> Result<()> {
    let mut w = create(path)?;
    write_triplets(op, &mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_triplets<R: BufRead>(r: R) -> std::io::Result<Vec<(usize, usize, f64)>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        let mut it = line.split_whitespace();
        let parsed = (|| {
            let a = it.next()?.parse().ok()?;
            let b = it.next()?.parse().ok()?;
            let v = it.next()?.parse().ok()?;
            Some((a, b, v))
        })();
        match parsed {
            Some(t) => out.push(t),
            None if line.trim().is_empty() => {}
            None => {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("bad triplet `{line}`"),
                ))
            }
        }
    }
    Ok(out)
}

/// Writes `text` to `path`, creating parent directories.
pub fn save_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn load_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
