use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub region_id: String,
    pub name: String,
    pub province_id: String,
    pub urban_flag: bool,
    pub centroid_x: f64,
    pub centroid_y: f64,
}

/// Region metadata and planar centroids, in a fixed order that every
/// region-indexed vector in the crate follows.
#[derive(Debug, Clone)]
pub struct RegionTable {
    entries: Vec<Region>,
    index: HashMap<String, usize>,
}

impl PartialEq for RegionTable {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl RegionTable {
    pub fn new(entries: Vec<Region>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, r) in entries.iter().enumerate() {
            if r.region_id.is_empty() {
                return Err(Error::invalid(format!(
                    "region at position {i} has an empty id"
                )));
            }
            if !(r.centroid_x.is_finite() && r.centroid_y.is_finite()) {
                return Err(Error::invalid(format!(
                    "region '{}' has a non-finite centroid",
                    r.region_id
                )));
            }
            if index.insert(r.region_id.clone(), i).is_some() {
                return Err(Error::invalid(format!(
                    "duplicate region id '{}'",
                    r.region_id
                )));
            }
        }
        Ok(Self { entries, index })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Region] {
        &self.entries
    }

    pub fn get(&self, i: usize) -> &Region {
        &self.entries[i]
    }

    pub fn index_of(&self, region_id: &str) -> Option<usize> {
        self.index.get(region_id).copied()
    }

    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(|r| r.region_id.clone()).collect()
    }

    pub fn centroids(&self) -> Vec<[f64; 2]> {
        self.entries
            .iter()
            .map(|r| [r.centroid_x, r.centroid_y])
            .collect()
    }

    pub fn province_of(&self, region_id: &str) -> Option<&str> {
        self.index_of(region_id)
            .map(|i| self.entries[i].province_id.as_str())
    }

    /// Loads a region CSV or a GeoJSON FeatureCollection of points, chosen by extension.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_json = matches!(
            path.extension().and_then(|e| e.to_str()),
            Some("geojson") | Some("json")
        );
        if is_json {
            Self::from_geojson_str(&text)
        } else {
            Self::from_csv_reader(text.as_bytes(), &path.display().to_string())
        }
    }

    pub fn from_csv_reader<R: Read>(reader: R, source: &str) -> Result<Self> {
        const HEADER: [&str; 6] = [
            "region_id",
            "name",
            "province_id",
            "urban_flag",
            "centroid_x",
            "centroid_y",
        ];
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let cols: Vec<usize> = HEADER
            .iter()
            .map(|h| {
                headers.iter().position(|c| c == *h).ok_or_else(|| {
                    Error::Schema(format!("{source}: region file lacks column '{h}'"))
                })
            })
            .collect::<Result<_>>()?;
        if let Some(extra) = headers.iter().find(|h| !HEADER.contains(h)) {
            return Err(Error::Schema(format!(
                "{source}: unknown region column '{extra}'"
            )));
        }
        let mut entries = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| parse_err(source, &e))?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            let field = |k: usize| rec.get(cols[k]).unwrap_or("");
            let num = |k: usize| -> Result<f64> {
                field(k).parse::<f64>().map_err(|_| Error::Parse {
                    path: source.to_string(),
                    line,
                    message: format!("bad {} '{}'", HEADER[k], field(k)),
                })
            };
            entries.push(Region {
                region_id: field(0).to_string(),
                name: field(1).to_string(),
                province_id: field(2).to_string(),
                urban_flag: parse_flag(field(3)).ok_or_else(|| Error::Parse {
                    path: source.to_string(),
                    line,
                    message: format!("bad urban_flag '{}'", field(3)),
                })?,
                centroid_x: num(4)?,
                centroid_y: num(5)?,
            });
        }
        Self::new(entries)
    }

    pub fn from_geojson_str(text: &str) -> Result<Self> {
        let doc: Value = serde_json::from_str(text)?;
        if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
            return Err(Error::Schema(
                "GeoJSON root must be a FeatureCollection".into(),
            ));
        }
        let features = doc
            .get("features")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Schema("FeatureCollection without features".into()))?;
        let mut entries = Vec::with_capacity(features.len());
        for (i, f) in features.iter().enumerate() {
            let geom = f
                .get("geometry")
                .ok_or_else(|| Error::Schema(format!("feature {i}: no geometry")))?;
            if geom.get("type").and_then(Value::as_str) != Some("Point") {
                return Err(Error::Schema(format!(
                    "feature {i}: geometry must be a Point"
                )));
            }
            let coords = geom
                .get("coordinates")
                .and_then(Value::as_array)
                .filter(|c| c.len() >= 2)
                .ok_or_else(|| Error::Schema(format!("feature {i}: bad coordinates")))?;
            let props = f
                .get("properties")
                .and_then(Value::as_object)
                .ok_or_else(|| Error::Schema(format!("feature {i}: no properties")))?;
            let text_prop = |k: &str| -> Result<String> {
                match props.get(k) {
                    Some(Value::String(s)) => Ok(s.clone()),
                    Some(Value::Number(n)) => Ok(n.to_string()),
                    _ => Err(Error::Schema(format!(
                        "feature {i}: missing property '{k}'"
                    ))),
                }
            };
            let urban = match props.get("urban_flag") {
                Some(Value::Bool(b)) => *b,
                Some(Value::Number(n)) => n.as_f64() == Some(1.0),
                Some(Value::String(s)) => parse_flag(s)
                    .ok_or_else(|| Error::Schema(format!("feature {i}: bad urban_flag")))?,
                _ => {
                    return Err(Error::Schema(format!(
                        "feature {i}: missing property 'urban_flag'"
                    )))
                }
            };
            entries.push(Region {
                region_id: text_prop("region_id")?,
                name: text_prop("name").unwrap_or_default(),
                province_id: text_prop("province_id")?,
                urban_flag: urban,
                centroid_x: coords[0]
                    .as_f64()
                    .ok_or_else(|| Error::Schema(format!("feature {i}: bad x")))?,
                centroid_y: coords[1]
                    .as_f64()
                    .ok_or_else(|| Error::Schema(format!("feature {i}: bad y")))?,
            });
        }
        Self::new(entries)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "region_id",
            "name",
            "province_id",
            "urban_flag",
            "centroid_x",
            "centroid_y",
        ])?;
        for r in &self.entries {
            w.write_record([
                r.region_id.as_str(),
                r.name.as_str(),
                r.province_id.as_str(),
                if r.urban_flag { "1" } else { "0" },
                &r.centroid_x.to_string(),
                &r.centroid_y.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    /// Point FeatureCollection with each region's base properties merged with `extra[i]`.
    pub fn to_geojson(&self, extra: &[Map<String, Value>]) -> Value {
        let features: Vec<Value> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mut props = Map::new();
                props.insert("region_id".into(), json!(r.region_id));
                props.insert("name".into(), json!(r.name));
                props.insert("province_id".into(), json!(r.province_id));
                props.insert("urban_flag".into(), json!(r.urban_flag));
                if let Some(e) = extra.get(i) {
                    for (k, v) in e {
                        props.insert(k.clone(), v.clone());
                    }
                }
                json!({
                    "type": "Feature",
                    "geometry": { "type": "Point", "coordinates": [r.centroid_x, r.centroid_y] },
                    "properties": Value::Object(props),
                })
            })
            .collect();
        json!({ "type": "FeatureCollection", "features": features })
    }
}

fn parse_flag(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "1" | "true" | "urban" | "yes" => Some(true),
        "0" | "false" | "rural" | "no" => Some(false),
        _ => None,
    }
}

fn parse_err(source: &str, e: &csv::Error) -> Error {
    Error::Parse {
        path: source.to_string(),
        line: e.position().map(|p| p.line() as usize).unwrap_or(0),
        message: e.to_string(),
    }
}
