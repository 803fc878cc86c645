//! File formats: model JSON, reduced-model JSON and curve CSV.
//!
//! Floats are written with 17 significant digits so that reloading
//! reproduces every value bit-exactly. Readers go through serde_json and
//! name the offending field on schema violations.

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use serde_json::Value;

use crate::dynamics::{Curve, CurvePoint, PointTag};
use crate::model::PhysicalModel;
use crate::rom::{Forcing, ManifoldMap, MapTerm, ReducedModel, RomMethod, RomTerm};
use crate::tensor::{SymTensor3, SymTensor4};

/// 17-significant-digit float formatting (round-trips f64 exactly).
pub fn fmt_f64(v: f64) -> String {
    if v == 0.0 {
        return "0.0".to_string();
    }
    format!("{v:.16e}")
}

fn fmt_vec(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| fmt_f64(*x)).collect();
    format!("[{}]", items.join(", "))
}

fn fmt_exps(v: &[u8]) -> String {
    let items: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    format!("[{}]", items.join(", "))
}

fn is_identity(m: &DMatrix<f64>) -> bool {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let expect = if i == j { 1.0 } else { 0.0 };
            if m[(i, j)] != expect {
                return false;
            }
        }
    }
    true
}

/// Serialise a model to the canonical JSON layout.
pub fn write_model(model: &PhysicalModel) -> String {
    write_model_with_provenance(model, None)
}

/// Model JSON with an optional provenance block (identification metadata).
pub fn write_model_with_provenance(model: &PhysicalModel, provenance: Option<&str>) -> String {
    let n = model.n();
    let mut out = String::new();
    out.push_str("{\n");
    out.push_str(&format!("  \"n\": {n},\n"));
    if is_identity(&model.mass) {
        out.push_str("  \"mass\": \"identity\",\n");
    } else {
        out.push_str("  \"mass\": [\n");
        for i in 0..n {
            let row: Vec<f64> = (0..n).map(|j| model.mass[(i, j)]).collect();
            out.push_str(&format!(
                "    {}{}\n",
                fmt_vec(&row),
                if i + 1 < n { "," } else { "" }
            ));
        }
        out.push_str("  ],\n");
    }
    out.push_str("  \"stiffness\": [\n");
    for i in 0..n {
        let row: Vec<f64> = (0..n).map(|j| model.stiffness[(i, j)]).collect();
        out.push_str(&format!(
            "    {}{}\n",
            fmt_vec(&row),
            if i + 1 < n { "," } else { "" }
        ));
    }
    out.push_str("  ],\n");
    out.push_str("  \"quad\": [");
    let quad: Vec<String> = model
        .quad
        .entries()
        .map(|(k, v)| format!("[{}, {}, {}, {}]", k[0], k[1], k[2], fmt_f64(*v)))
        .collect();
    out.push_str(&quad.join(", "));
    out.push_str("],\n");
    out.push_str("  \"cubic\": [");
    let cubic: Vec<String> = model
        .cubic
        .entries()
        .map(|(k, v)| {
            format!(
                "[{}, {}, {}, {}, {}]",
                k[0],
                k[1],
                k[2],
                k[3],
                fmt_f64(*v)
            )
        })
        .collect();
    out.push_str(&cubic.join(", "));
    out.push_str("]");
    if let Some(p) = provenance {
        out.push_str(",\n  \"provenance\": ");
        out.push_str(p);
    }
    out.push_str("\n}\n");
    out
}

fn field<'a>(v: &'a Value, name: &str) -> Result<&'a Value> {
    v.get(name)
        .ok_or_else(|| anyhow!("model file is missing the field '{name}'"))
}

fn as_index(v: &Value, what: &str) -> Result<usize> {
    v.as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| anyhow!("field '{what}' must be a non-negative integer"))
}

fn as_float(v: &Value, what: &str) -> Result<f64> {
    v.as_f64()
        .ok_or_else(|| anyhow!("field '{what}' must be a number"))
}

fn read_matrix(v: &Value, n: usize, what: &str) -> Result<DMatrix<f64>> {
    let rows = v
        .as_array()
        .ok_or_else(|| anyhow!("field '{what}' must be an array of rows"))?;
    if rows.len() != n {
        bail!("field '{what}' must have {n} rows, found {}", rows.len());
    }
    let mut out = DMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        let cols = row
            .as_array()
            .ok_or_else(|| anyhow!("field '{what}' row {i} must be an array"))?;
        if cols.len() != n {
            bail!("field '{what}' row {i} must have {n} entries");
        }
        for (j, c) in cols.iter().enumerate() {
            out[(i, j)] = as_float(c, what)?;
        }
    }
    Ok(out)
}

/// Parse the canonical model JSON.
pub fn read_model(text: &str) -> Result<PhysicalModel> {
    let v: Value = serde_json::from_str(text).context("model file is not valid JSON")?;
    let n = as_index(field(&v, "n")?, "n")?;
    if n == 0 {
        bail!("field 'n' must be positive");
    }
    let mass = match field(&v, "mass")? {
        Value::String(s) if s == "identity" => DMatrix::identity(n, n),
        other => read_matrix(other, n, "mass")?,
    };
    let stiffness = read_matrix(field(&v, "stiffness")?, n, "stiffness")?;

    let mut quad_entries = Vec::new();
    for (pos, item) in field(&v, "quad")?
        .as_array()
        .ok_or_else(|| anyhow!("field 'quad' must be an array"))?
        .iter()
        .enumerate()
    {
        let arr = item
            .as_array()
            .ok_or_else(|| anyhow!("field 'quad' entry {pos} must be an array"))?;
        if arr.len() != 4 {
            bail!("field 'quad' entry {pos} must be [s, i, j, value]");
        }
        let idx = [
            as_index(&arr[0], "quad.s")?,
            as_index(&arr[1], "quad.i")?,
            as_index(&arr[2], "quad.j")?,
        ];
        quad_entries.push((idx, as_float(&arr[3], "quad.value")?));
    }
    let quad = SymTensor3::from_canonical(n, &quad_entries).context("field 'quad'")?;

    let mut cubic_entries = Vec::new();
    for (pos, item) in field(&v, "cubic")?
        .as_array()
        .ok_or_else(|| anyhow!("field 'cubic' must be an array"))?
        .iter()
        .enumerate()
    {
        let arr = item
            .as_array()
            .ok_or_else(|| anyhow!("field 'cubic' entry {pos} must be an array"))?;
        if arr.len() != 5 {
            bail!("field 'cubic' entry {pos} must be [s, i, j, k, value]");
        }
        let idx = [
            as_index(&arr[0], "cubic.s")?,
            as_index(&arr[1], "cubic.i")?,
            as_index(&arr[2], "cubic.j")?,
            as_index(&arr[3], "cubic.k")?,
        ];
        cubic_entries.push((idx, as_float(&arr[4], "cubic.value")?));
    }
    let cubic = SymTensor4::from_canonical(n, &cubic_entries).context("field 'cubic'")?;
    PhysicalModel::new(mass, stiffness, quad, cubic)
}

fn write_map(map: &ManifoldMap) -> String {
    let mut out = String::from("{\n");
    out.push_str(&format!("    \"order\": {},\n", map.order));
    out.push_str(&format!("    \"n_full\": {},\n", map.n_full));
    out.push_str("    \"linear\": [\n");
    for i in 0..map.n_full {
        let row: Vec<f64> = (0..map.m()).map(|j| map.linear[(i, j)]).collect();
        out.push_str(&format!(
            "      {}{}\n",
            fmt_vec(&row),
            if i + 1 < map.n_full { "," } else { "" }
        ));
    }
    out.push_str("    ],\n");
    let term_str = |t: &MapTerm| {
        format!(
            "[{}, {}, {}]",
            fmt_exps(&t.disp_exps),
            fmt_exps(&t.vel_exps),
            fmt_vec(t.coeff.as_slice())
        )
    };
    let disp: Vec<String> = map.disp_terms.iter().map(term_str).collect();
    out.push_str(&format!("    \"disp\": [{}],\n", disp.join(", ")));
    let vel: Vec<String> = map.vel_terms.iter().map(term_str).collect();
    out.push_str(&format!("    \"vel\": [{}]\n", vel.join(", ")));
    out.push_str("  }");
    out
}

/// Serialise a reduced model (and optionally its manifold map) to JSON.
pub fn write_rom(rm: &ReducedModel, map: Option<&ManifoldMap>) -> String {
    let mut rm = rm.clone();
    rm.canonicalise();
    let mut out = String::from("{\n");
    out.push_str(&format!("  \"method\": \"{}\",\n", rm.method.as_str()));
    let masters: Vec<String> = rm.masters.iter().map(|m| (m + 1).to_string()).collect();
    out.push_str(&format!("  \"masters\": [{}],\n", masters.join(", ")));
    out.push_str(&format!("  \"omega\": {},\n", fmt_vec(&rm.omega)));
    out.push_str("  \"monomials\": [\n");
    for (r, _) in rm.masters.iter().enumerate() {
        let terms: Vec<String> = rm
            .terms
            .iter()
            .filter(|t| t.eq == r)
            .map(|t| {
                format!(
                    "[{}, {}, {}]",
                    fmt_f64(t.coeff),
                    fmt_exps(&t.disp_exps),
                    fmt_exps(&t.vel_exps)
                )
            })
            .collect();
        out.push_str(&format!(
            "    [{}]{}\n",
            terms.join(", "),
            if r + 1 < rm.masters.len() { "," } else { "" }
        ));
    }
    out.push_str("  ]");
    if let Some(xi) = &rm.damping {
        out.push_str(&format!(",\n  \"damping\": {}", fmt_vec(xi)));
    }
    if let Some(f) = &rm.forcing {
        out.push_str(&format!(
            ",\n  \"forcing\": {{\"amplitude\": {}, \"frequency\": {}}}",
            fmt_vec(&f.amplitude),
            fmt_f64(f.frequency)
        ));
    }
    if let Some(map) = map {
        out.push_str(",\n  \"map\": ");
        out.push_str(&write_map(map));
    }
    out.push_str("\n}\n");
    out
}

fn read_exps(v: &Value, what: &str, m: usize) -> Result<Vec<u8>> {
    let arr = v
        .as_array()
        .ok_or_else(|| anyhow!("field '{what}' must be an exponent array"))?;
    if arr.len() != m {
        bail!("field '{what}' must have {m} exponents");
    }
    arr.iter()
        .map(|e| {
            e.as_u64()
                .filter(|&x| x <= u64::from(u8::MAX))
                .map(|x| x as u8)
                .ok_or_else(|| anyhow!("field '{what}' exponents must be small integers"))
        })
        .collect()
}

/// Parse the reduced-model JSON.
pub fn read_rom(text: &str) -> Result<(ReducedModel, Option<ManifoldMap>)> {
    let v: Value = serde_json::from_str(text).context("reduced-model file is not valid JSON")?;
    let method = RomMethod::from_str(
        field(&v, "method")?
            .as_str()
            .ok_or_else(|| anyhow!("field 'method' must be a string"))?,
    )?;
    let masters: Vec<usize> = field(&v, "masters")?
        .as_array()
        .ok_or_else(|| anyhow!("field 'masters' must be an array"))?
        .iter()
        .map(|x| {
            let i = as_index(x, "masters")?;
            if i == 0 {
                bail!("field 'masters' uses 1-based mode numbers");
            }
            Ok(i - 1)
        })
        .collect::<Result<_>>()?;
    let m = masters.len();
    let omega: Vec<f64> = field(&v, "omega")?
        .as_array()
        .ok_or_else(|| anyhow!("field 'omega' must be an array"))?
        .iter()
        .map(|x| as_float(x, "omega"))
        .collect::<Result<_>>()?;
    if omega.len() != m {
        bail!("field 'omega' must have one entry per master");
    }
    let eqs = field(&v, "monomials")?
        .as_array()
        .ok_or_else(|| anyhow!("field 'monomials' must be an array per equation"))?;
    if eqs.len() != m {
        bail!("field 'monomials' must have one list per master equation");
    }
    let mut terms = Vec::new();
    for (eq, list) in eqs.iter().enumerate() {
        for (pos, t) in list
            .as_array()
            .ok_or_else(|| anyhow!("field 'monomials[{eq}]' must be an array"))?
            .iter()
            .enumerate()
        {
            let arr = t.as_array().ok_or_else(|| {
                anyhow!("field 'monomials[{eq}][{pos}]' must be [coeff, disp, vel]")
            })?;
            if arr.len() != 3 {
                bail!("field 'monomials[{eq}][{pos}]' must be [coeff, disp, vel]");
            }
            terms.push(RomTerm {
                eq,
                coeff: as_float(&arr[0], "monomials.coeff")?,
                disp_exps: read_exps(&arr[1], "monomials.disp", m)?,
                vel_exps: read_exps(&arr[2], "monomials.vel", m)?,
            });
        }
    }
    let damping = match v.get("damping") {
        None | Some(Value::Null) => None,
        Some(d) => Some(
            d.as_array()
                .ok_or_else(|| anyhow!("field 'damping' must be an array"))?
                .iter()
                .map(|x| as_float(x, "damping"))
                .collect::<Result<Vec<f64>>>()?,
        ),
    };
    let forcing = match v.get("forcing") {
        None | Some(Value::Null) => None,
        Some(f) => {
            let amplitude = field(f, "amplitude")?
                .as_array()
                .ok_or_else(|| anyhow!("field 'forcing.amplitude' must be an array"))?
                .iter()
                .map(|x| as_float(x, "forcing.amplitude"))
                .collect::<Result<Vec<f64>>>()?;
            Some(Forcing {
                amplitude,
                frequency: as_float(field(f, "frequency")?, "forcing.frequency")?,
            })
        }
    };
    let mut rm = ReducedModel {
        method,
        masters: masters.clone(),
        omega,
        terms,
        damping,
        forcing,
    };
    rm.canonicalise();

    let map = match v.get("map") {
        None | Some(Value::Null) => None,
        Some(mv) => {
            let order = as_index(field(mv, "order")?, "map.order")?;
            let n_full = as_index(field(mv, "n_full")?, "map.n_full")?;
            let lin_rows = field(mv, "linear")?
                .as_array()
                .ok_or_else(|| anyhow!("field 'map.linear' must be an array"))?;
            if lin_rows.len() != n_full {
                bail!("field 'map.linear' must have n_full rows");
            }
            let mut linear = DMatrix::zeros(n_full, m);
            for (i, row) in lin_rows.iter().enumerate() {
                let cols = row
                    .as_array()
                    .ok_or_else(|| anyhow!("field 'map.linear' rows must be arrays"))?;
                if cols.len() != m {
                    bail!("field 'map.linear' rows must have one column per master");
                }
                for (j, c) in cols.iter().enumerate() {
                    linear[(i, j)] = as_float(c, "map.linear")?;
                }
            }
            let read_terms = |name: &str| -> Result<Vec<MapTerm>> {
                field(mv, name)?
                    .as_array()
                    .ok_or_else(|| anyhow!("field 'map.{name}' must be an array"))?
                    .iter()
                    .map(|t| {
                        let arr = t.as_array().ok_or_else(|| {
                            anyhow!("field 'map.{name}' entries must be [disp, vel, coeff]")
                        })?;
                        if arr.len() != 3 {
                            bail!("field 'map.{name}' entries must be [disp, vel, coeff]");
                        }
                        let coeff: Vec<f64> = arr[2]
                            .as_array()
                            .ok_or_else(|| anyhow!("field 'map.{name}' coeff must be an array"))?
                            .iter()
                            .map(|x| as_float(x, "map coefficient"))
                            .collect::<Result<_>>()?;
                        if coeff.len() != n_full {
                            bail!("field 'map.{name}' coefficient vectors must have n_full rows");
                        }
                        Ok(MapTerm {
                            disp_exps: read_exps(&arr[0], "map disp exps", m)?,
                            vel_exps: read_exps(&arr[1], "map vel exps", m)?,
                            coeff: DVector::from_vec(coeff),
                        })
                    })
                    .collect()
            };
            Some(ManifoldMap {
                method,
                order,
                masters,
                n_full,
                linear,
                disp_terms: read_terms("disp")?,
                vel_terms: read_terms("vel")?,
            })
        }
    };
    Ok((rm, map))
}

/// Curve CSV: metadata comment, a header, then one row per point.
pub fn write_curve(curve: &Curve) -> String {
    let m = curve.masters.len();
    let mut out = String::new();
    let masters: Vec<String> = curve.masters.iter().map(|x| (x + 1).to_string()).collect();
    out.push_str(&format!(
        "# method={} masters={}\n",
        curve.method,
        masters.join("+")
    ));
    let amps: Vec<String> = (1..=m).map(|i| format!("a_{i}")).collect();
    out.push_str(&format!("omega,{},stable,tag\n", amps.join(",")));
    for p in &curve.points {
        let amps: Vec<String> = p.amplitude.iter().map(|a| fmt_f64(*a)).collect();
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt_f64(p.omega),
            amps.join(","),
            u8::from(p.stable),
            p.tag.as_str()
        ));
    }
    out
}

/// Parse a curve CSV produced by `write_curve`.
pub fn read_curve(text: &str) -> Result<Curve> {
    let mut method = String::new();
    let mut masters: Vec<usize> = Vec::new();
    let mut points = Vec::new();
    let mut m = 0usize;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            for part in meta.split_whitespace() {
                if let Some(v) = part.strip_prefix("method=") {
                    method = v.to_string();
                } else if let Some(v) = part.strip_prefix("masters=") {
                    masters = v
                        .split('+')
                        .map(|x| {
                            x.parse::<usize>()
                                .map_err(|_| anyhow!("bad master list in curve metadata"))
                                .map(|i| i.saturating_sub(1))
                        })
                        .collect::<Result<_>>()?;
                }
            }
            continue;
        }
        if line.starts_with("omega,") {
            m = line.split(',').filter(|c| c.starts_with("a_")).count();
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != m + 3 {
            bail!("curve row has {} cells, expected {}", cells.len(), m + 3);
        }
        let omega: f64 = cells[0]
            .parse()
            .map_err(|_| anyhow!("bad omega value '{}'", cells[0]))?;
        let amplitude: Vec<f64> = cells[1..=m]
            .iter()
            .map(|c| {
                c.parse::<f64>()
                    .map_err(|_| anyhow!("bad amplitude value '{c}'"))
            })
            .collect::<Result<_>>()?;
        let stable = match cells[m + 1] {
            "0" => false,
            "1" => true,
            other => bail!("bad stability flag '{other}'"),
        };
        let tag = PointTag::from_str(cells[m + 2])
            .ok_or_else(|| anyhow!("bad point tag '{}'", cells[m + 2]))?;
        points.push(CurvePoint {
            omega,
            amplitude,
            stable,
            tag,
        });
    }
    if masters.is_empty() {
        masters = (0..m).collect();
    }
    Ok(Curve {
        method,
        masters,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{CurvePoint, PointTag};
    use crate::zoo::{make_shallow_arch, BeamSpec};

    #[test]
    fn model_roundtrip_bit_identical() {
        let mm = make_shallow_arch(&BeamSpec {
            modes: 3,
            rise: 0.7,
            ..BeamSpec::default()
        })
        .unwrap();
        let model = mm.as_physical();
        let text = write_model(&model);
        let back = read_model(&text).unwrap();
        let text2 = write_model(&back);
        assert_eq!(text, text2, "serialisation must be stable");
        assert_eq!(model.mass, back.mass);
        assert_eq!(model.stiffness, back.stiffness);
        for (k, v) in model.quad.entries() {
            assert_eq!(back.quad.get(*k), *v);
        }
        for (k, v) in model.cubic.entries() {
            assert_eq!(back.cubic.get(*k), *v);
        }
    }

    #[test]
    fn model_loader_rejects_non_canonical() {
        let text = r#"{"n": 2, "mass": "identity", "stiffness": [[1.0, 0.0],[0.0, 4.0]],
                      "quad": [[1, 0, 0, 0.5]], "cubic": []}"#;
        let err = read_model(text).unwrap_err();
        assert!(format!("{err:#}").contains("sorted"), "{err:#}");
        let text = r#"{"n": 2, "mass": "identity", "stiffness": [[1.0, 0.0],[0.0, 4.0]],
                      "quad": [[0, 0, 1, 0.5],[0, 0, 1, 0.5]], "cubic": []}"#;
        let err = read_model(text).unwrap_err();
        assert!(format!("{err:#}").contains("duplicate"), "{err:#}");
    }

    #[test]
    fn model_loader_names_missing_field() {
        let err = read_model(r#"{"n": 1, "mass": "identity"}"#).unwrap_err();
        assert!(err.to_string().contains("stiffness"), "{err}");
    }

    #[test]
    fn rom_roundtrip_with_map() {
        use crate::model::ModalModel;
        use crate::tensor::{SymTensor3, SymTensor4};
        let mm = ModalModel::from_modal_data(
            vec![1.0, 2.5],
            SymTensor3::from_raw(2, &[([0, 0, 1], 0.5)]).unwrap(),
            SymTensor4::from_raw(2, &[([0, 0, 0, 0], 1.0)]).unwrap(),
            None,
        )
        .unwrap();
        let (map, rm) = crate::rom::invariant::graph_single(&mm, 0).unwrap();
        let text = write_rom(&rm, Some(&map));
        let (rm2, map2) = read_rom(&text).unwrap();
        assert_eq!(write_rom(&rm2, map2.as_ref()), text);
        assert_eq!(rm2.terms.len(), rm.terms.len());
        for t in &rm.terms {
            assert_eq!(rm2.coeff(t.eq, &t.disp_exps, &t.vel_exps), t.coeff);
        }
    }

    #[test]
    fn curve_roundtrip_preserves_tags() {
        let curve = Curve {
            method: "nf".into(),
            masters: vec![0],
            points: vec![
                CurvePoint {
                    omega: 1.01,
                    amplitude: vec![0.1],
                    stable: true,
                    tag: PointTag::None,
                },
                CurvePoint {
                    omega: 1.05,
                    amplitude: vec![0.4],
                    stable: false,
                    tag: PointTag::Sn,
                },
            ],
        };
        let text = write_curve(&curve);
        let back = read_curve(&text).unwrap();
        assert_eq!(back.method, "nf");
        assert_eq!(back.masters, vec![0]);
        assert_eq!(back.points.len(), 2);
        assert_eq!(back.points[1].tag, PointTag::Sn);
        assert_eq!(back.points[0].omega, 1.01);
        assert_eq!(write_curve(&back), text);
    }
}
