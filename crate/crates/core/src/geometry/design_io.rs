//! Survey design files: `id,kind,radius,geometry`, where geometry is `x y`
//! for points and traps and `x1 y1;x2 y2;...` for transects.

use std::io::Write;
use std::path::Path;

use super::{Point, SampledRegion, SurveyDesign, SurveyUnit, UnitKind};
use crate::error::{Error, Result};

const HEADER: [&str; 4] = ["id", "kind", "radius", "geometry"];

fn parse_vertices(text: &str) -> std::result::Result<Vec<Point>, String> {
    text.split(';')
        .map(|pair| {
            let coords: Vec<&str> = pair.split_whitespace().collect();
            if coords.len() != 2 {
                return Err(format!("expected 'x y', found '{}'", pair.trim()));
            }
            let x = coords[0].parse::<f64>().map_err(|_| format!("bad x coordinate '{}'", coords[0]))?;
            let y = coords[1].parse::<f64>().map_err(|_| format!("bad y coordinate '{}'", coords[1]))?;
            Ok(Point::new(x, y))
        })
        .collect()
}

pub fn read_design(path: impl AsRef<Path>) -> Result<SurveyDesign> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_design(&text, path)
}

pub(crate) fn parse_design(text: &str, path: &Path) -> Result<SurveyDesign> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::parse(path, 1, e.to_string()))?.clone();
    let found: Vec<String> = headers.iter().map(|h| h.to_ascii_lowercase()).collect();
    if found != HEADER {
        return Err(Error::parse(
            path,
            1,
            format!("expected header '{}', found '{}'", HEADER.join(","), found.join(",")),
        ));
    }
    let mut regions = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::parse(path, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let fail = |msg: String| Error::parse(path, line, msg);
        let kind: UnitKind = record[1].parse().map_err(|e: Error| fail(e.to_string()))?;
        let radius: f64 = record[2].parse().map_err(|_| fail(format!("bad radius '{}'", &record[2])))?;
        let vertices = parse_vertices(&record[3]).map_err(fail)?;
        let unit = SurveyUnit::new(&record[0], kind, vertices).map_err(|e| fail(e.to_string()))?;
        regions.push(SampledRegion::new(unit, radius).map_err(|e| fail(e.to_string()))?);
    }
    SurveyDesign::new(regions).map_err(|e| Error::parse(path, 0, e.to_string()))
}

pub fn write_design(design: &SurveyDesign, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    writeln!(out, "{}", HEADER.join(",")).unwrap();
    for r in &design.regions {
        let geometry = r.unit.vertices.iter().map(|v| format!("{} {}", v.x, v.y)).collect::<Vec<_>>().join(";");
        writeln!(out, "{},{},{},{}", r.id(), r.kind(), r.radius, geometry).unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_write() {
        let text =
            "id,kind,radius,geometry\np1,point,0.04,0.3 0.4\nt1,transect,0.1,0 0;1 0;1 1\nk1,trap,0.02,0.7 0.7\n";
        let d = parse_design(text, Path::new("d.csv")).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.regions[1].unit.vertices.len(), 3);
        assert_eq!(d.regions[2].kind(), UnitKind::Trap);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("design.csv");
        write_design(&d, &p).unwrap();
        assert_eq!(read_design(&p).unwrap(), d);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "id,kind,radius,geometry\np1,point,0.04,0.3 0.4\np2,bogus,0.04,0.3 0.4\n";
        match parse_design(text, Path::new("d.csv")) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("bogus"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let text = "id,kind,geometry\np1,point,0.3 0.4\n";
        assert!(matches!(parse_design(text, Path::new("d.csv")), Err(Error::Parse { line: 1, .. })));
        let text = "id,kind,radius,geometry\nt,transect,0.1,0 0\n";
        assert!(parse_design(text, Path::new("d.csv")).is_err());
        let text = "id,kind,radius,geometry\na,point,0.1,0 0\na,trap,0.1,1 1\n";
        assert!(parse_design(text, Path::new("d.csv")).is_err());
    }
}
