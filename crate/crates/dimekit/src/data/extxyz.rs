//! Extended-XYZ reading and writing.
//!
//! Grammar per record: an atom-count line; a comment line of
//! space-separated key=value pairs including
//! `Properties=species:S:1:pos:R:3[:forces:R:3]` and optionally
//! `energy=<float eV>`; then one line per atom,
//! `<symbol> <x> <y> <z> [<fx> <fy> <fz>]`. Floats are written with 17
//! significant digits, so write -> parse -> write is byte-identical.

use std::io::{BufRead, Write};
use std::path::Path;

use super::elements::{symbol_to_z, z_to_symbol};
use crate::error::{Error, Result};
use crate::geometry::AtomicConfiguration;

const PROPS_PLAIN: &str = "species:S:1:pos:R:3";
const PROPS_FORCES: &str = "species:S:1:pos:R:3:forces:R:3";

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Write configurations as concatenated extended-XYZ records.
pub fn write_extxyz<W: Write>(w: &mut W, configs: &[AtomicConfiguration]) -> Result<()> {
    for c in configs {
        c.validate()?;
        writeln!(w, "{}", c.len())?;
        let props = if c.forces.is_some() { PROPS_FORCES } else { PROPS_PLAIN };
        match c.energy {
            Some(e) => writeln!(w, "energy={} Properties={}", fmt_f64(e), props)?,
            None => writeln!(w, "Properties={props}")?,
        }
        for (i, (&z, p)) in c.atomic_numbers.iter().zip(&c.positions).enumerate() {
            let sym = z_to_symbol(z)?;
            match &c.forces {
                Some(f) => writeln!(
                    w,
                    "{} {} {} {} {} {} {}",
                    sym,
                    fmt_f64(p[0]),
                    fmt_f64(p[1]),
                    fmt_f64(p[2]),
                    fmt_f64(f[i][0]),
                    fmt_f64(f[i][1]),
                    fmt_f64(f[i][2])
                )?,
                None => writeln!(
                    w,
                    "{} {} {} {}",
                    sym,
                    fmt_f64(p[0]),
                    fmt_f64(p[1]),
                    fmt_f64(p[2])
                )?,
            }
        }
    }
    Ok(())
}

/// Parse concatenated extended-XYZ records.
pub fn parse_extxyz<R: BufRead>(r: R) -> Result<Vec<AtomicConfiguration>> {
    let mut lines = r.lines().enumerate();
    let mut configs = Vec::new();
    loop {
        // atom-count line (skip trailing blank lines between records)
        let (line_no, count) = loop {
            match lines.next() {
                None => return Ok(configs),
                Some((i, line)) => {
                    let line = line?;
                    let t = line.trim();
                    if t.is_empty() {
                        continue;
                    }
                    let n: usize = t.parse().map_err(|_| Error::Parse {
                        line: i + 1,
                        msg: format!("expected an atom count, found {t:?}"),
                    })?;
                    if n == 0 {
                        return Err(Error::Parse {
                            line: i + 1,
                            msg: "atom count must be positive".into(),
                        });
                    }
                    break (i + 1, n);
                }
            }
        };

        // comment line with key=value pairs
        let (ci, comment) = lines.next().ok_or(Error::Parse {
            line: line_no,
            msg: "record truncated before the comment line".into(),
        })?;
        let comment = comment?;
        let mut energy = None;
        let mut with_forces = None;
        for token in comment.split_whitespace() {
            let Some((key, value)) = token.split_once('=') else {
                return Err(Error::Parse {
                    line: ci + 1,
                    msg: format!("expected key=value, found {token:?}"),
                });
            };
            match key {
                "energy" => {
                    let e: f64 = value.parse().map_err(|_| Error::Parse {
                        line: ci + 1,
                        msg: format!("invalid energy value {value:?}"),
                    })?;
                    energy = Some(e);
                }
                "Properties" => {
                    with_forces = Some(match value {
                        PROPS_PLAIN => false,
                        PROPS_FORCES => true,
                        other => {
                            return Err(Error::Parse {
                                line: ci + 1,
                                msg: format!("unsupported Properties string {other:?}"),
                            })
                        }
                    });
                }
                _ => {} // foreign keys are ignored
            }
        }
        let with_forces = with_forces.ok_or(Error::Parse {
            line: ci + 1,
            msg: "comment line lacks a Properties entry".into(),
        })?;

        let mut zs = Vec::with_capacity(count);
        let mut pos = Vec::with_capacity(count);
        let mut forces = if with_forces { Some(Vec::with_capacity(count)) } else { None };
        for _ in 0..count {
            let (ai, line) = lines.next().ok_or(Error::Parse {
                line: line_no,
                msg: format!("record truncated: expected {count} atom lines"),
            })?;
            let line = line?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            let want = if with_forces { 7 } else { 4 };
            if fields.len() != want {
                return Err(Error::Parse {
                    line: ai + 1,
                    msg: format!("expected {want} fields, found {}", fields.len()),
                });
            }
            let z = symbol_to_z(fields[0]).ok_or_else(|| Error::Parse {
                line: ai + 1,
                msg: format!("unknown element symbol {:?}", fields[0]),
            })?;
            let mut nums = [0.0f64; 6];
            for (k, f) in fields[1..].iter().enumerate() {
                nums[k] = f.parse().map_err(|_| Error::Parse {
                    line: ai + 1,
                    msg: format!("invalid number {f:?}"),
                })?;
            }
            zs.push(z);
            pos.push([nums[0], nums[1], nums[2]]);
            if let Some(forces) = &mut forces {
                forces.push([nums[3], nums[4], nums[5]]);
            }
        }
        configs.push(
            AtomicConfiguration::with_labels(zs, pos, energy, forces)
                .map_err(|e| Error::Parse { line: line_no, msg: e.to_string() })?,
        );
    }
}

pub fn read_extxyz_file(path: &Path) -> Result<Vec<AtomicConfiguration>> {
    let file = std::fs::File::open(path)?;
    parse_extxyz(std::io::BufReader::new(file))
}

pub fn write_extxyz_file(path: &Path, configs: &[AtomicConfiguration]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_extxyz(&mut w, configs)?;
    w.flush()?;
    Ok(())
}
