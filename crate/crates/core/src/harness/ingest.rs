use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::sampling::CountVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IngestFormat {
    /// Rows `source_id,value`.
    Samples,
    /// Rows `value,count`.
    Counts,
}

/// Samples read from a file. `values` are 0-based; files use `1..=n`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SampleTable {
    pub source_ids: Vec<u64>,
    pub values: Vec<usize>,
}

impl SampleTable {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Per-value counts over a domain of size `n`.
    pub fn counts(&self, n: usize) -> CountVector {
        let mut c = CountVector::zeros(n);
        self.values.iter().for_each(|&v| c.add(v));
        c
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Ingested {
    Samples(SampleTable),
    Counts(CountVector),
}

/// Reads a two-column CSV file whose values lie in `1..=n`.
pub fn ingest_samples(path: &Path, format: IngestFormat, n: usize) -> Result<Ingested, HarnessError> {
    let file = std::fs::File::open(path).map_err(|e| HarnessError::io(path.display().to_string(), e))?;
    match format {
        IngestFormat::Samples => Ok(Ingested::Samples(parse_samples(file, n)?)),
        IngestFormat::Counts => Ok(Ingested::Counts(parse_counts(file, n)?)),
    }
}

/// Parses `source_id,value` rows. A non-numeric first row is taken as a header.
pub fn parse_samples<R: Read>(reader: R, n: usize) -> Result<SampleTable, HarnessError> {
    let mut table = SampleTable::default();
    for_each_pair(reader, |line, id, value| {
        table.source_ids.push(id);
        table.values.push(to_index(line, value, n)?);
        Ok(())
    })?;
    Ok(table)
}

/// Parses `value,count` rows into `T`; repeated values accumulate.
pub fn parse_counts<R: Read>(reader: R, n: usize) -> Result<CountVector, HarnessError> {
    let mut counts = CountVector::zeros(n);
    for_each_pair(reader, |line, value, count| {
        let x = to_index(line, value, n)?;
        if counts.total().checked_add(count).is_none() {
            return Err(HarnessError::Parse {
                line,
                message: "total count overflows 64 bits".into(),
            });
        }
        counts.add_many(x, count);
        Ok(())
    })?;
    Ok(counts)
}

fn to_index(line: u64, value: u64, n: usize) -> Result<usize, HarnessError> {
    if value == 0 || value > n as u64 {
        return Err(HarnessError::IndexOutOfDomain { line, value, n });
    }
    Ok(value as usize - 1)
}

fn for_each_pair<R, F>(reader: R, mut f: F) -> Result<(), HarnessError>
where
    R: Read,
    F: FnMut(u64, u64, u64) -> Result<(), HarnessError>,
{
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut record = csv::StringRecord::new();
    let mut first = true;
    loop {
        let more = rdr.read_record(&mut record).map_err(|e| HarnessError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        if !more {
            return Ok(());
        }
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != 2 {
            return Err(HarnessError::Parse {
                line,
                message: format!("expected 2 fields, found {}", record.len()),
            });
        }
        let parsed = (record[0].parse::<u64>(), record[1].parse::<u64>());
        match parsed {
            (Ok(a), Ok(b)) => f(line, a, b)?,
            (Err(_), Err(_)) if first => {}
            (a, _) => {
                let bad = if a.is_err() { &record[0] } else { &record[1] };
                return Err(HarnessError::Parse {
                    line,
                    message: format!("{bad:?} is not a non-negative integer"),
                });
            }
        }
        first = false;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_rows() {
        let t = parse_samples("1,5\n2,5".as_bytes(), 10).unwrap();
        assert_eq!(t.source_ids, vec![1, 2]);
        assert_eq!(t.values, vec![4, 4]);
    }

    #[test]
    fn count_rows() {
        let c = parse_counts("5,3".as_bytes(), 5).unwrap();
        assert_eq!(c.counts(), &[0, 0, 0, 0, 3]);
        let c = parse_counts("value,count\n1,2\n1,1\n".as_bytes(), 2).unwrap();
        assert_eq!(c.counts(), &[3, 0]);
    }

    #[test]
    fn header_and_blank_lines() {
        let t = parse_samples("source_id,value\n\n1,1\n# note\n3,2\n".as_bytes(), 2).unwrap();
        assert_eq!(t.values, vec![0, 1]);
    }

    #[test]
    fn malformed_lines_report_their_number() {
        match parse_samples("1,5\n2,x\n".as_bytes(), 10) {
            Err(HarnessError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match parse_samples("1,5\n2,5,7\n".as_bytes(), 10) {
            Err(HarnessError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match parse_samples("a,b\nc,d\n".as_bytes(), 10) {
            Err(HarnessError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn out_of_domain() {
        assert!(matches!(
            parse_samples("1,11".as_bytes(), 10),
            Err(HarnessError::IndexOutOfDomain {
                line: 1,
                value: 11,
                n: 10
            })
        ));
        assert!(matches!(
            parse_counts("0,1".as_bytes(), 10),
            Err(HarnessError::IndexOutOfDomain { value: 0, .. })
        ));
    }
}
