//! Checkpoint layout: a UTF-8 header terminated by a line `end`, followed by
//! the concatenated little-endian `f64` payloads in header order.
//!
//! ```text
//! NEURTV-CHECKPOINT 1
//! architecture=tf-net
//! input_dim=2
//! ...
//! array core param 4 4
//! array f0.w0 param 64 1
//! end
//! <binary>
//! ```

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::array::DenseArray;
use crate::error::{Error, Result};
use crate::net::{Architecture, CoordinateNetwork, NetworkSpec};

const MAGIC: &str = "NEURTV-CHECKPOINT 1";

fn join(values: &[usize]) -> String {
    values
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn write_checkpoint(net: &CoordinateNetwork, path: &Path) -> Result<()> {
    let spec = net.spec();
    let mut head = String::new();
    head.push_str(MAGIC);
    head.push('\n');
    let fields = [
        ("architecture", spec.architecture.to_string()),
        ("input_dim", spec.input_dim.to_string()),
        ("width", spec.width.to_string()),
        ("depth", spec.depth.to_string()),
        ("omega0", format!("{:?}", spec.omega0)),
        ("bias", spec.bias.to_string()),
        ("ranks", join(&spec.ranks)),
        ("pe_features", spec.pe_features.to_string()),
        ("pe_scale", format!("{:?}", spec.pe_scale)),
        ("seed", spec.seed.to_string()),
    ];
    for (k, v) in fields {
        head.push_str(&format!("{k}={v}\n"));
    }
    let arrays: Vec<(&String, &DenseArray, &str)> = net
        .params()
        .iter()
        .map(|(k, v)| (k, v, "param"))
        .chain(net.buffers().iter().map(|(k, v)| (k, v, "buffer")))
        .collect();
    for (name, arr, kind) in &arrays {
        head.push_str(&format!("array {name} {kind} {}\n", join(arr.shape())));
    }
    head.push_str("end\n");

    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(head.as_bytes())?;
    for (_, arr, _) in &arrays {
        for v in arr.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| bad(format!("bad value `{v}` for `{key}`")))
}

pub fn read_checkpoint(path: &Path) -> Result<CoordinateNetwork> {
    let mut input = BufReader::new(std::fs::File::open(path)?);
    let mut line = String::new();
    let mut next_line = |input: &mut BufReader<std::fs::File>| -> Result<String> {
        line.clear();
        if input.read_line(&mut line)? == 0 {
            return Err(bad("truncated header"));
        }
        Ok(line.trim_end_matches(['\n', '\r']).to_owned())
    };

    if next_line(&mut input)? != MAGIC {
        return Err(bad("missing magic line"));
    }
    let mut kv = BTreeMap::new();
    let mut layout = Vec::new();
    loop {
        let l = next_line(&mut input)?;
        if l == "end" {
            break;
        }
        if let Some(rest) = l.strip_prefix("array ") {
            let mut it = rest.split_whitespace();
            let (Some(name), Some(kind)) = (it.next(), it.next()) else {
                return Err(bad(format!("bad array line `{l}`")));
            };
            let shape = it
                .map(|s| parse::<usize>("shape", s))
                .collect::<Result<Vec<_>>>()?;
            if kind != "param" && kind != "buffer" {
                return Err(bad(format!("bad array kind `{kind}`")));
            }
            layout.push((name.to_owned(), kind == "param", shape));
        } else if let Some((k, v)) = l.split_once('=') {
            kv.insert(k.to_owned(), v.to_owned());
        } else {
            return Err(bad(format!("unrecognized header line `{l}`")));
        }
    }

    let get = |k: &str| kv.get(k).map(String::as_str).ok_or_else(|| bad(format!("missing `{k}`")));
    let architecture: Architecture = get("architecture")?.parse()?;
    let ranks = get("ranks")?
        .split_whitespace()
        .map(|s| parse::<usize>("ranks", s))
        .collect::<Result<Vec<_>>>()?;
    let spec = NetworkSpec {
        architecture,
        input_dim: parse("input_dim", get("input_dim")?)?,
        width: parse("width", get("width")?)?,
        depth: parse("depth", get("depth")?)?,
        omega0: parse("omega0", get("omega0")?)?,
        bias: parse("bias", get("bias")?)?,
        ranks,
        pe_features: parse("pe_features", get("pe_features")?)?,
        pe_scale: parse("pe_scale", get("pe_scale")?)?,
        seed: parse("seed", get("seed")?)?,
    };

    let mut params = BTreeMap::new();
    let mut buffers = BTreeMap::new();
    let mut buf = [0u8; 8];
    for (name, is_param, shape) in layout {
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            input
                .read_exact(&mut buf)
                .map_err(|_| bad(format!("truncated data for `{name}`")))?;
            data.push(f64::from_le_bytes(buf));
        }
        let arr = DenseArray::new(shape, data)?;
        if is_param {
            params.insert(name, arr);
        } else {
            buffers.insert(name, arr);
        }
    }
    if input.read(&mut buf)? != 0 {
        return Err(bad("trailing bytes after payload"));
    }
    CoordinateNetwork::from_parts(spec, params, buffers)
}
