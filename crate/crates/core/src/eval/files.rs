//! `predictions.csv` (`recording_id,mass_g`, `NA` for no estimate) and
//! `truth.csv` (`recording_id,mass_g,class`).

use std::fs;
use std::path::Path;

use super::TruthRecord;
use crate::data::{ContainerClass, MassPrediction};
use crate::error::{Error, Result};

const NA: &str = "NA";

fn csv_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Csv(format!("{}: {e}", path.display()))
}

fn parse_mass(path: &Path, line: usize, s: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| csv_err(path, format!("line {line}: bad mass {s:?}")))?;
    if !v.is_finite() {
        return Err(csv_err(path, format!("line {line}: non-finite mass {s:?}")));
    }
    Ok(v)
}

fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<(usize, csv::StringRecord)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let got = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    if got.iter().map(str::trim).ne(header.iter().copied()) {
        return Err(csv_err(path, format!("expected header {}", header.join(","))));
    }
    reader
        .records()
        .enumerate()
        .map(|(i, r)| r.map(|r| (i + 2, r)).map_err(|e| csv_err(path, e)))
        .collect()
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<MassPrediction>> {
    let path = path.as_ref();
    read_rows(path, &["recording_id", "mass_g"])?
        .into_iter()
        .map(|(line, r)| {
            let id = r[0].trim().to_string();
            let est = match r[1].trim() {
                NA => None,
                s => Some(parse_mass(path, line, s)?),
            };
            Ok(MassPrediction::from_file(id, est))
        })
        .collect()
}

pub fn save_predictions(predictions: &[MassPrediction], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_writer(Vec::new());
    let put = |w: &mut csv::Writer<Vec<u8>>, row: [&str; 2]| w.write_record(row).map_err(|e| csv_err(path, e));
    put(&mut w, ["recording_id", "mass_g"])?;
    for p in predictions {
        let mass = p.estimate().map_or(NA.to_string(), |m| m.to_string());
        put(&mut w, [p.recording_id(), &mass])?;
    }
    let bytes = w.into_inner().map_err(|e| csv_err(path, e))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_truth(path: impl AsRef<Path>) -> Result<Vec<TruthRecord>> {
    let path = path.as_ref();
    read_rows(path, &["recording_id", "mass_g", "class"])?
        .into_iter()
        .map(|(line, r)| {
            let mass = parse_mass(path, line, &r[1])?;
            if mass <= 0.0 {
                return Err(csv_err(path, format!("line {line}: true mass must be positive")));
            }
            Ok(TruthRecord {
                recording_id: r[0].trim().to_string(),
                mass,
                class: r[2].trim().parse::<ContainerClass>()?,
            })
        })
        .collect()
}

pub fn save_truth(truths: &[TruthRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["recording_id", "mass_g", "class"])
        .map_err(|e| csv_err(path, e))?;
    for t in truths {
        w.write_record([t.recording_id.as_str(), &t.mass.to_string(), t.class.as_str()])
            .map_err(|e| csv_err(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| csv_err(path, e))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predictions_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("predictions.csv");
        let preds = vec![
            MassPrediction::from_file("a", Some(12.345678901234)),
            MassPrediction::from_file("b", None),
        ];
        save_predictions(&preds, &path).unwrap();
        assert_eq!(
            fs::read_to_string(&path).unwrap(),
            "recording_id,mass_g\na,12.345678901234\nb,NA\n"
        );
        assert_eq!(load_predictions(&path).unwrap(), preds);
    }

    #[test]
    fn truth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.csv");
        let t = vec![TruthRecord {
            recording_id: "r1".into(),
            mass: 87.5,
            class: ContainerClass::Box,
        }];
        save_truth(&t, &path).unwrap();
        assert_eq!(load_truth(&path).unwrap(), t);
    }

    #[test]
    fn bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        fs::write(&path, "id,mass\na,1\n").unwrap();
        assert!(load_predictions(&path).is_err());
        fs::write(&path, "recording_id,mass_g\na,heavy\n").unwrap();
        let err = load_predictions(&path).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        fs::write(&path, "recording_id,mass_g,class\na,10,pitcher\n").unwrap();
        assert!(matches!(load_truth(&path), Err(Error::UnknownClass(_))));
        fs::write(&path, "recording_id,mass_g,class\na,0,cup\n").unwrap();
        assert!(load_truth(&path).is_err());
    }
}
