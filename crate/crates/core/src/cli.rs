//! Config parsing, CSV/JSON emission and the text produced by each
//! subcommand. The binary in `src/bin` is a thin wrapper around these.

use std::fmt::Write as _;

use serde::de::DeserializeOwned;
use serde_json::Value;

use crate::adversary::{collusion_medoid_attack, omniscient_linear_attack, AdversaryView};
use crate::aggregation::{
    average, eta, krum_select, resilience_angle, sq_dist_medoid_select, AggregationInput, ResilienceAngle, Rule,
};
use crate::error::{Error, Result};
use crate::resilience::ResilienceSetup;
use crate::simulator::{ExperimentConfig, ExperimentTrace, RoundRecord};
use crate::vector::GradientVector;

pub const TRACE_HEADER: &str = "t,cost,grad_norm,gamma,selected_ids,byzantine_selected,agg_to_grad_dist,x_norm";

/// Parses and fully validates an experiment config.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let value: Value = serde_json::from_str(text)?;
    config_from_value(value)
}

pub fn config_from_value(value: Value) -> Result<ExperimentConfig> {
    let config: ExperimentConfig = deserialize(value)?;
    config.validate()?;
    Ok(config)
}

pub fn resilience_setup_from_value(value: Value) -> Result<ResilienceSetup> {
    let setup: ResilienceSetup = deserialize(value)?;
    setup.validate()?;
    Ok(setup)
}

fn deserialize<T: DeserializeOwned>(value: Value) -> Result<T> {
    serde_json::from_value(value).map_err(|e| {
        let message = e.to_string();
        let key = message
            .split('`')
            .nth(1)
            .filter(|_| message.starts_with("unknown field") || message.starts_with("missing field"))
            .unwrap_or("<document>")
            .to_string();
        Error::Config { key, message }
    })
}

/// Applies `key=value` overrides onto a JSON document. Dotted keys walk
/// into nested objects; values are parsed as JSON, falling back to a string.
pub fn apply_overrides(doc: &mut Value, overrides: &[String]) -> Result<()> {
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::config(item.as_str(), "override must look like key=value"))?;
        let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut slot = &mut *doc;
        for part in key.split('.') {
            let obj = slot
                .as_object_mut()
                .ok_or_else(|| Error::config(key, format!("`{part}` is not inside an object")))?;
            slot = obj.entry(part.to_string()).or_insert(Value::Null);
        }
        *slot = parsed;
    }
    Ok(())
}

fn real(x: f64) -> String {
    format!("{x:.16e}")
}

/// CSV with header [`TRACE_HEADER`], one row per round, LF endings. Reals
/// carry 17 significant digits and parse back bit-exactly.
pub fn emit_trace_csv(trace: &ExperimentTrace) -> String {
    let mut out = String::with_capacity(64 * (trace.records.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in &trace.records {
        let ids: Vec<String> = r.selected_ids.iter().map(usize::to_string).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.t,
            real(r.cost),
            real(r.grad_norm),
            real(r.gamma),
            ids.join(";"),
            r.byzantine_selected,
            real(r.agg_to_grad_dist),
            real(r.x_norm)
        );
    }
    out
}

/// Inverse of [`emit_trace_csv`].
pub fn parse_trace_csv(text: &str) -> Result<Vec<RoundRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(TRACE_HEADER) {
        return Err(Error::InvalidInput("missing or unexpected trace header".into()));
    }
    let bad = |line: &str| Error::InvalidInput(format!("malformed trace row: {line}"));
    lines
        .map(|line| {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 8 {
                return Err(bad(line));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(line));
            Ok(RoundRecord {
                t: fields[0].parse().map_err(|_| bad(line))?,
                cost: num(fields[1])?,
                grad_norm: num(fields[2])?,
                gamma: num(fields[3])?,
                selected_ids: if fields[4].is_empty() {
                    Vec::new()
                } else {
                    fields[4].split(';').map(|s| s.parse().map_err(|_| bad(line))).collect::<Result<_>>()?
                },
                byzantine_selected: fields[5].parse().map_err(|_| bad(line))?,
                agg_to_grad_dist: num(fields[6])?,
                x_norm: num(fields[7])?,
            })
        })
        .collect()
}

/// Text of the `eta` subcommand.
pub fn eta_summary(n: usize, f: usize, angle: Option<(usize, f64, f64)>) -> Result<String> {
    let value: f64 = eta(n, f)?;
    let mut out = format!("eta(n={n}, f={f}) = {value}\n");
    if let Some((d, sigma, grad_norm)) = angle {
        match resilience_angle(n, f, d, sigma, grad_norm)? {
            ResilienceAngle::Guaranteed { sin_alpha } => {
                let _ = writeln!(out, "sin_alpha = {sin_alpha}");
                let _ = writeln!(out, "bound (1 - sin_alpha) * |g|^2 = {}", (1.0 - sin_alpha) * grad_norm * grad_norm);
            }
            ResilienceAngle::OutsideGuarantee { ratio } => {
                let _ = writeln!(out, "sin_alpha = {ratio}");
                let _ = writeln!(
                    out,
                    "warning: eta*sqrt(d)*sigma >= |g|; the gradient is inside the flat basin and no angle guarantee applies"
                );
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DemoScenario {
    Lemma1,
    Figure3,
}

impl std::str::FromStr for DemoScenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lemma1" => Ok(DemoScenario::Lemma1),
            "figure3" => Ok(DemoScenario::Figure3),
            other => Err(Error::InvalidInput(format!(
                "unknown scenario `{other}`; expected one of: lemma1, figure3"
            ))),
        }
    }
}

fn vector(c: &[f64]) -> GradientVector<f64> {
    GradientVector::new(c.to_vec()).expect("finite literal")
}

/// Text of the `attack-demo` subcommand.
pub fn attack_demo(scenario: DemoScenario) -> Result<String> {
    let mut out = String::new();
    match scenario {
        DemoScenario::Lemma1 => {
            let correct = vec![(1, vector(&[1.0, 0.0])), (2, vector(&[0.0, 1.0]))];
            let target = vector(&[5.0, 5.0]);
            let view = AdversaryView::new(0, GradientVector::zeros(2), correct.clone(), Rule::Average)?;
            let third = 1.0 / 3.0;
            let crafted = omniscient_linear_attack(&view, &[third; 3], 3, &target)?;
            let mut all: Vec<_> = correct.into_iter().map(|(_, v)| v).collect();
            all.push(crafted.clone());
            let avg = average(&AggregationInput::from_vectors(all, 1)?);
            let equal = avg.distance(&target) <= 1e-9 * target.norm();
            let _ = writeln!(out, "correct vectors: [1, 0], [0, 1]; target U = [5, 5]");
            let _ = writeln!(out, "byzantine vector: {:?}", crafted.as_slice());
            let _ = writeln!(out, "average: {:?}", avg.as_slice());
            let _ = writeln!(out, "average == target: {equal}");
        }
        DemoScenario::Figure3 => {
            let (n, f, d) = (9, 2, 2);
            let correct: Vec<_> = (1..=n - f).map(|id| (id, GradientVector::zeros(d))).collect();
            let view = AdversaryView::new(0, GradientVector::zeros(d), correct.clone(), Rule::Medoid)?;
            let byz = collusion_medoid_attack(&view, f, 70.0, &GradientVector::basis(d, 0, 1.0))?;
            let mut all: Vec<_> = correct.into_iter().map(|(_, v)| v).collect();
            all.extend(byz);
            let input = AggregationInput::from_vectors(all, f)?;
            let medoid = sq_dist_medoid_select(&input).selected_ids[0];
            let krum = krum_select(&input)?.selected_ids[0];
            let _ = writeln!(out, "n={n}, f={f}: 7 correct vectors at the origin, remote vector at 70*e1, barycenter vector at 8.75*e1 (ids 8, 9)");
            let _ = writeln!(out, "medoid selects worker {medoid}; krum selects worker {krum}");
            let _ = writeln!(
                out,
                "medoid selected byzantine: {}, krum selected byzantine: {}",
                medoid > n - f,
                krum > n - f
            );
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::run_experiment;

    const MINIMAL: &str = r#"{"n":11,"f":2,"rule":"krum",
        "cost":{"variant":"quadratic","d":10,"x_star":[0,0,0,0,0,0,0,0,0,0]},
        "estimator":{"variant":"gaussian","sigma":0.5},
        "attack":{"variant":"sign_flip","kappa":10},
        "schedule":{"gamma0":0.5,"p":1.0},"rounds":3000,"seed":42}"#;

    #[test]
    fn minimal_document_is_accepted() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.n, 11);
        assert_eq!(cfg.rule, Rule::Krum);
    }

    #[test]
    fn krum_precondition_rejected_with_key() {
        let mut doc: Value = serde_json::from_str(MINIMAL).unwrap();
        apply_overrides(&mut doc, &["n=6".into()]).unwrap();
        let err = config_from_value(doc).unwrap_err().to_string();
        assert!(err.contains("krum requires 2f+2 < n: got n=6, f=2"), "{err}");
    }

    #[test]
    fn schedule_boundary_rejected() {
        let mut doc: Value = serde_json::from_str(MINIMAL).unwrap();
        apply_overrides(&mut doc, &["schedule.p=0.5".into()]).unwrap();
        let err = config_from_value(doc).unwrap_err().to_string();
        assert!(err.contains("schedule.p") && err.contains("sum(gamma_t^2) < inf"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut doc: Value = serde_json::from_str(MINIMAL).unwrap();
        apply_overrides(&mut doc, &["roundz=3".into()]).unwrap();
        let err = config_from_value(doc).unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "roundz"), "{err}");
        let mut doc: Value = serde_json::from_str(MINIMAL).unwrap();
        apply_overrides(&mut doc, &["attack.kapa=3".into()]).unwrap();
        assert!(config_from_value(doc).is_err());
        assert!(parse_config("{not json").is_err());
    }

    #[test]
    fn trace_csv_shapes() {
        let mut cfg = parse_config(MINIMAL).unwrap();
        cfg.rounds = 0;
        let empty = emit_trace_csv(&run_experiment(&cfg).unwrap());
        assert_eq!(empty, format!("{TRACE_HEADER}\n"));
        cfg.rounds = 1;
        let one = emit_trace_csv(&run_experiment(&cfg).unwrap());
        let lines: Vec<&str> = one.split_terminator('\n').collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[1].starts_with("0,"));
        assert!(!one.contains('\r'));
    }

    #[test]
    fn eta_text() {
        assert!(eta_summary(8, 0, None).unwrap().contains("= 4\n"));
        assert!(eta_summary(5, 1, None).unwrap().contains("4.24264068711"));
        assert!(eta_summary(6, 2, None).is_err());
        assert!(eta_summary(9, 2, Some((5, 1.0, 1.0))).unwrap().contains("warning"));
    }

    #[test]
    fn demos() {
        let lemma = attack_demo(DemoScenario::Lemma1).unwrap();
        assert_eq!(lemma.lines().last(), Some("average == target: true"));
        let fig = attack_demo(DemoScenario::Figure3).unwrap();
        assert_eq!(fig.lines().last(), Some("medoid selected byzantine: true, krum selected byzantine: false"));
        assert!("lemma2".parse::<DemoScenario>().is_err());
    }
}
