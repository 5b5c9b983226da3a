//! Dataset CSV: header `domain,label,f_0,...,f_{C_ch·N-1}`, one sample per
//! row, floats in shortest round-trip form, LF line endings.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DataError, DomainDataset, Sample};

pub fn write_csv<W: Write>(ds: &DomainDataset, w: W) -> Result<(), DataError> {
    let mut w = BufWriter::new(w);
    let mut line = String::from("domain,label");
    for i in 0..ds.width() {
        line.push_str(&format!(",f_{i}"));
    }
    writeln!(w, "{line}")?;
    for s in &ds.samples {
        line.clear();
        line.push_str(&format!("{},{}", s.domain, s.y));
        for v in &s.x {
            // `{:?}` is the shortest representation that parses back exactly.
            line.push_str(&format!(",{v:?}"));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(ds: &DomainDataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    write_csv(ds, File::create(path)?)
}

fn parse_err(line: u64, message: impl Into<String>) -> DataError {
    DataError::Parse {
        line,
        message: message.into(),
    }
}

/// Reads one domain's samples; `channels` splits each row into `[C_ch × N]`.
pub fn read_csv<R: Read>(r: R, channels: usize) -> Result<DomainDataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(BufReader::new(r));
    let header = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let width = header.len().saturating_sub(2);
    let expected = ["domain".to_string(), "label".to_string()]
        .into_iter()
        .chain((0..width).map(|i| format!("f_{i}")));
    if width == 0 || header.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(DataError::Header(header.iter().collect::<Vec<_>>().join(",")));
    }
    if channels == 0 || width % channels != 0 {
        return Err(DataError::Config(format!(
            "{width} feature columns cannot be split into {channels} channels"
        )));
    }

    let mut samples = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { pos, expected_len, len } => parse_err(
                pos.as_ref().map_or(0, |p| p.line()),
                format!("expected {expected_len} columns, found {len}"),
            ),
            _ => parse_err(e.position().map_or(0, |p| p.line()), e.to_string()),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let int = |i: usize, name: &str| {
            rec[i]
                .trim()
                .parse::<usize>()
                .map_err(|_| parse_err(line, format!("bad {name} `{}`", &rec[i])))
        };
        let domain = int(0, "domain")?;
        let y = int(1, "label")?;
        let x = rec
            .iter()
            .skip(2)
            .map(|f| {
                let v: f64 = f
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(line, format!("bad number `{f}`")))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(parse_err(line, format!("non-finite value `{f}`")))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(first) = samples.first().map(|s: &Sample| s.domain) {
            if first != domain {
                return Err(parse_err(
                    line,
                    format!("domain {domain} differs from {first} earlier in the file"),
                ));
            }
        }
        samples.push(Sample { x, y, domain });
    }
    let domain = samples.first().map(|s| s.domain).ok_or(DataError::Empty)?;
    DomainDataset::new(domain, channels, width / channels, samples)
}

pub fn load_csv(path: impl AsRef<Path>, channels: usize) -> Result<DomainDataset, DataError> {
    read_csv(File::open(path)?, channels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> DomainDataset {
        let samples = vec![
            Sample {
                x: vec![0.1, -1e-300, 1.0 / 3.0, 2.5e17],
                y: 1,
                domain: 3,
            },
            Sample {
                x: vec![f64::MIN_POSITIVE, -0.0, 7.0, 1e-7],
                y: 0,
                domain: 3,
            },
        ];
        DomainDataset::new(3, 2, 2, samples).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let ds = tiny();
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("domain,label,f_0,f_1,f_2,f_3\n"));
        assert!(!text.contains('\r'));
        let back = read_csv(&buf[..], 2).unwrap();
        assert_eq!(back.domain, 3);
        for (a, b) in ds.samples.iter().zip(&back.samples) {
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.x), bits(&b.x));
            assert_eq!(a.y, b.y);
        }
    }

    #[test]
    fn wrong_column_count_names_line() {
        let text = "domain,label,f_0,f_1\n0,1,0.5,0.25\n0,1,0.5\n";
        match read_csv(text.as_bytes(), 1) {
            Err(DataError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_number_names_line() {
        let text = "domain,label,f_0\n0,1,0.5\n0,1,abc\n";
        match read_csv(text.as_bytes(), 1) {
            Err(DataError::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("abc"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_header() {
        let text = "dom,label,f_0\n0,1,0.5\n";
        assert!(matches!(read_csv(text.as_bytes(), 1), Err(DataError::Header(_))));
        let text = "domain,label,x_0\n0,1,0.5\n";
        assert!(matches!(read_csv(text.as_bytes(), 1), Err(DataError::Header(_))));
    }

    #[test]
    fn header_only_is_empty() {
        assert!(matches!(
            read_csv("domain,label,f_0\n".as_bytes(), 1),
            Err(DataError::Empty)
        ));
    }
}
