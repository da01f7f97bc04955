//! JSON network-spec schema.
//!
//! ```json
//! {"kind": "dag",
//!  "classes": [{"id": 1, "nodes": [1,2,3,4], "edges": [[1,2],[1,3],[2,4],[3,4]], "lambda": 0.2}],
//!  "servers": [{"id": 1, "tasks": [1,2,3]}, {"id": 2, "tasks": [3,4]}],
//!  "mu": {"1": 0.5, "2": "2/5", "3": 0.4, "4": 0.5},
//!  "alpha": {"1": 1, "2": 1}}
//!
//! {"kind": "fqn", "num_queues": 3,
//!  "servers": [{"id": 1, "tasks": [1,2]}, {"id": 2, "tasks": [2,3]}],
//!  "mu": [0.6, 0.4, 0.5], "alpha": [1, 1],
//!  "lambda": [0.1, 0, 0],
//!  "routing": [[0,1,0],[0.5,0,0.5],[0,0,0]]}
//! ```
//!
//! Ids are 1-based and must be contiguous. Rates are numbers or `"a/b"` strings.
//! `mu` and `alpha` are either maps keyed by id or arrays in id order. Non-factorizable
//! rates are given as a K x J `mu_kj` matrix instead of `mu` (and `alpha` is then ignored
//! by the dynamics). For DAGs `lambda` may sit on each class or at top level (a number for
//! every class, or an array in class order).

use std::collections::BTreeMap;

use serde::Deserialize;
use serde_json::{json, Value};

use crate::scalar::Real;

use super::{
    DagJobClass, DagNetworkSpec, FqnNetworkSpec, ModelError, NetworkSpec, ServerSpec, ServiceModel,
    ServiceRates,
};

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum RateValue {
    Number(f64),
    Text(String),
}

impl RateValue {
    fn value(&self) -> Result<f64, ModelError> {
        match self {
            RateValue::Number(x) => Ok(*x),
            RateValue::Text(s) => parse_rate(s),
        }
    }
}

/// Parses `"0.25"` or `"4/3"`.
pub fn parse_rate(s: &str) -> Result<f64, ModelError> {
    let s = s.trim();
    let bad = || ModelError::Parse(format!("cannot parse rate {s:?}"));
    if let Some((n, d)) = s.split_once('/') {
        let n: f64 = n.trim().parse().map_err(|_| bad())?;
        let d: f64 = d.trim().parse().map_err(|_| bad())?;
        if d == 0.0 {
            return Err(bad());
        }
        Ok(n / d)
    } else {
        s.parse().map_err(|_| bad())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum RateTable {
    List(Vec<RateValue>),
    Map(BTreeMap<String, RateValue>),
}

impl RateTable {
    fn resolve(&self, n: usize, what: &str) -> Result<Vec<f64>, ModelError> {
        match self {
            RateTable::List(v) => {
                if v.len() != n {
                    return Err(ModelError::Parse(format!(
                        "{what}: expected {n} entries, got {}",
                        v.len()
                    )));
                }
                v.iter().map(RateValue::value).collect()
            }
            RateTable::Map(m) => {
                let mut out = vec![None; n];
                for (key, val) in m {
                    let id: usize = key
                        .trim()
                        .parse()
                        .map_err(|_| ModelError::Parse(format!("{what}: bad id {key:?}")))?;
                    if id == 0 || id > n {
                        return Err(ModelError::Parse(format!("{what}: id {id} out of range 1..={n}")));
                    }
                    out[id - 1] = Some(val.value()?);
                }
                out.into_iter()
                    .enumerate()
                    .map(|(i, v)| {
                        v.ok_or_else(|| ModelError::Parse(format!("{what}: missing id {}", i + 1)))
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum LambdaValue {
    Scalar(RateValue),
    List(Vec<RateValue>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawServer {
    id: usize,
    tasks: Vec<usize>,
    #[serde(default)]
    speed: Option<RateValue>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClass {
    #[serde(default)]
    id: Option<usize>,
    nodes: Vec<usize>,
    #[serde(default)]
    edges: Vec<[usize; 2]>,
    #[serde(default)]
    lambda: Option<RateValue>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    kind: String,
    #[serde(default)]
    classes: Vec<RawClass>,
    #[serde(default)]
    num_queues: Option<usize>,
    servers: Vec<RawServer>,
    #[serde(default)]
    mu: Option<RateTable>,
    #[serde(default)]
    alpha: Option<RateTable>,
    #[serde(default)]
    mu_kj: Option<Vec<Vec<RateValue>>>,
    #[serde(default)]
    lambda: Option<LambdaValue>,
    #[serde(default)]
    routing: Option<Vec<Vec<RateValue>>>,
    #[serde(default)]
    #[allow(dead_code)]
    name: Option<String>,
    #[serde(default)]
    #[allow(dead_code)]
    notes: Option<String>,
}

fn to_id(id: usize, n: usize, what: &str) -> Result<usize, ModelError> {
    if id == 0 || id > n {
        Err(ModelError::Parse(format!("{what} id {id} out of range 1..={n}")))
    } else {
        Ok(id - 1)
    }
}

fn matrix(rows: &[Vec<RateValue>]) -> Result<Vec<Vec<f64>>, ModelError> {
    rows.iter()
        .map(|r| r.iter().map(RateValue::value).collect())
        .collect()
}

fn service_model<T: Real>(raw: &RawSpec, num_tasks: usize) -> Result<ServiceModel<T>, ModelError> {
    let j_total = raw.servers.len();
    let mut order: Vec<&RawServer> = raw.servers.iter().collect();
    order.sort_by_key(|s| s.id);
    for (i, s) in order.iter().enumerate() {
        if s.id != i + 1 {
            return Err(ModelError::Parse(format!(
                "server ids must be 1..={j_total} without gaps"
            )));
        }
    }
    let alpha_table = raw
        .alpha
        .as_ref()
        .map(|t| t.resolve(j_total, "alpha"))
        .transpose()?;
    let mut servers = Vec::with_capacity(j_total);
    for (j, s) in order.iter().enumerate() {
        let speed = match (&alpha_table, &s.speed) {
            (Some(a), _) => a[j],
            (None, Some(v)) => v.value()?,
            (None, None) => 1.0,
        };
        let tasks = s
            .tasks
            .iter()
            .map(|&k| to_id(k, num_tasks, "task"))
            .collect::<Result<Vec<_>, _>>()?;
        servers.push(ServerSpec {
            speed: T::lit(speed),
            tasks,
        });
    }
    let rates = match (&raw.mu, &raw.mu_kj) {
        (Some(_), Some(_)) => {
            return Err(ModelError::Parse("give either mu or mu_kj, not both".into()))
        }
        (Some(mu), None) => ServiceRates::Factorized {
            mu: mu.resolve(num_tasks, "mu")?.into_iter().map(T::lit).collect(),
        },
        (None, Some(m)) => {
            let m = matrix(m)?;
            if m.len() != num_tasks || m.iter().any(|r| r.len() != j_total) {
                return Err(ModelError::Parse(format!(
                    "mu_kj must be {num_tasks} x {j_total}"
                )));
            }
            ServiceRates::Generic {
                mu_kj: m
                    .into_iter()
                    .map(|r| r.into_iter().map(T::lit).collect())
                    .collect(),
            }
        }
        (None, None) => return Err(ModelError::Parse("missing service rates (mu or mu_kj)".into())),
    };
    Ok(ServiceModel::new(num_tasks, servers, rates))
}

/// Parses a network spec. Structural parse errors are returned here; invariant checks are
/// left to [`NetworkSpec::validate`].
pub fn parse_network<T: Real>(text: &str) -> Result<NetworkSpec<T>, ModelError> {
    let raw: RawSpec = serde_json::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
    match raw.kind.as_str() {
        "dag" => parse_dag(&raw).map(NetworkSpec::Dag),
        "fqn" => parse_fqn(&raw).map(NetworkSpec::Fqn),
        other => Err(ModelError::Parse(format!(
            "unknown kind {other:?} (expected \"dag\" or \"fqn\")"
        ))),
    }
}

fn parse_dag<T: Real>(raw: &RawSpec) -> Result<DagNetworkSpec<T>, ModelError> {
    if raw.classes.is_empty() {
        return Err(ModelError::Parse("dag spec needs at least one class".into()));
    }
    let num_tasks = raw
        .classes
        .iter()
        .flat_map(|c| c.nodes.iter().copied())
        .max()
        .unwrap_or(0);
    let mut classes_in: Vec<(usize, &RawClass)> = raw
        .classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.id.unwrap_or(i + 1), c))
        .collect();
    classes_in.sort_by_key(|(id, _)| *id);
    for (i, (id, _)) in classes_in.iter().enumerate() {
        if *id != i + 1 {
            return Err(ModelError::Parse(
                "class ids must be 1..=M without gaps".into(),
            ));
        }
    }
    let m_total = classes_in.len();
    let top_lambda: Option<Vec<f64>> = match &raw.lambda {
        None => None,
        Some(LambdaValue::Scalar(v)) => Some(vec![v.value()?; m_total]),
        Some(LambdaValue::List(v)) => {
            if v.len() != m_total {
                return Err(ModelError::Parse(format!(
                    "lambda: expected {m_total} entries, got {}",
                    v.len()
                )));
            }
            Some(v.iter().map(RateValue::value).collect::<Result<_, _>>()?)
        }
    };
    let mut classes = Vec::with_capacity(m_total);
    for (m, (_, c)) in classes_in.iter().enumerate() {
        let lambda = match (&top_lambda, &c.lambda) {
            (Some(l), _) => l[m],
            (None, Some(v)) => v.value()?,
            (None, None) => {
                return Err(ModelError::Parse(format!("class {} has no lambda", m + 1)))
            }
        };
        let nodes = c
            .nodes
            .iter()
            .map(|&k| to_id(k, num_tasks, "task"))
            .collect::<Result<Vec<_>, _>>()?;
        let edges = c
            .edges
            .iter()
            .map(|&[a, b]| Ok((to_id(a, num_tasks, "task")?, to_id(b, num_tasks, "task")?)))
            .collect::<Result<Vec<_>, ModelError>>()?;
        classes.push(DagJobClass {
            nodes,
            edges,
            arrival_rate: T::lit(lambda),
        });
    }
    Ok(DagNetworkSpec {
        classes,
        service: service_model(raw, num_tasks)?,
    })
}

fn parse_fqn<T: Real>(raw: &RawSpec) -> Result<FqnNetworkSpec<T>, ModelError> {
    let k = raw
        .num_queues
        .ok_or_else(|| ModelError::Parse("fqn spec needs num_queues".into()))?;
    let lambda = match &raw.lambda {
        Some(LambdaValue::List(v)) => v.iter().map(RateValue::value).collect::<Result<Vec<_>, _>>()?,
        Some(LambdaValue::Scalar(v)) => vec![v.value()?; k],
        None => return Err(ModelError::Parse("fqn spec needs lambda".into())),
    };
    let routing = match &raw.routing {
        Some(r) => matrix(r)?,
        None => vec![vec![0.0; k]; k],
    };
    Ok(FqnNetworkSpec {
        arrival_rates: lambda.into_iter().map(T::lit).collect(),
        routing: routing
            .into_iter()
            .map(|r| r.into_iter().map(T::lit).collect())
            .collect(),
        service: service_model(raw, k)?,
    })
}

fn service_json<T: Real>(service: &ServiceModel<T>, obj: &mut serde_json::Map<String, Value>) {
    let servers: Vec<Value> = service
        .servers()
        .iter()
        .enumerate()
        .map(|(j, s)| json!({"id": j + 1, "tasks": s.tasks.iter().map(|k| k + 1).collect::<Vec<_>>()}))
        .collect();
    obj.insert("servers".into(), Value::Array(servers));
    obj.insert(
        "alpha".into(),
        json!(service.alphas().iter().map(|a| a.as_f64()).collect::<Vec<_>>()),
    );
    match service.rates() {
        ServiceRates::Factorized { mu } => {
            obj.insert("mu".into(), json!(mu.iter().map(|m| m.as_f64()).collect::<Vec<_>>()));
        }
        ServiceRates::Generic { mu_kj } => {
            let m: Vec<Vec<f64>> = mu_kj
                .iter()
                .map(|r| r.iter().map(|x| x.as_f64()).collect())
                .collect();
            obj.insert("mu_kj".into(), json!(m));
        }
    }
}

/// Serializes a spec back into the same schema (array forms, 1-based ids).
pub fn network_to_json<T: Real>(spec: &NetworkSpec<T>) -> Value {
    let mut obj = serde_json::Map::new();
    obj.insert("kind".into(), json!(spec.kind()));
    match spec {
        NetworkSpec::Dag(d) => {
            let classes: Vec<Value> = d
                .classes
                .iter()
                .enumerate()
                .map(|(m, c)| {
                    json!({
                        "id": m + 1,
                        "nodes": c.nodes.iter().map(|k| k + 1).collect::<Vec<_>>(),
                        "edges": c.edges.iter().map(|&(a, b)| [a + 1, b + 1]).collect::<Vec<_>>(),
                        "lambda": c.arrival_rate.as_f64(),
                    })
                })
                .collect();
            obj.insert("classes".into(), Value::Array(classes));
            service_json(&d.service, &mut obj);
        }
        NetworkSpec::Fqn(f) => {
            obj.insert("num_queues".into(), json!(f.num_queues()));
            service_json(&f.service, &mut obj);
            obj.insert(
                "lambda".into(),
                json!(f.arrival_rates.iter().map(|x| x.as_f64()).collect::<Vec<_>>()),
            );
            let r: Vec<Vec<f64>> = f
                .routing
                .iter()
                .map(|row| row.iter().map(|x| x.as_f64()).collect())
                .collect();
            obj.insert("routing".into(), json!(r));
        }
    }
    Value::Object(obj)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG2A: &str = r#"{"kind":"dag",
        "classes":[{"id":1,"nodes":[1,2,3,4],"edges":[[1,2],[1,3],[2,4],[3,4]],"lambda":0.2}],
        "servers":[{"id":1,"tasks":[1,2,3]},{"id":2,"tasks":[3,4]}],
        "mu":{"1":0.5,"2":"2/5","3":0.4,"4":0.5},
        "alpha":{"1":1,"2":1}}"#;

    #[test]
    fn parses_dag_with_fraction_rates() {
        let spec: NetworkSpec<f64> = parse_network(FIG2A).unwrap();
        assert!(spec.validate().is_ok());
        assert_eq!(spec.service().task_rate(1), Some(0.4));
        assert!(spec.service().can_serve(2, 1));
        assert!(!spec.service().can_serve(0, 1));
    }

    #[test]
    fn round_trips_through_json() {
        let spec: NetworkSpec<f64> = parse_network(FIG2A).unwrap();
        let text = network_to_json(&spec).to_string();
        let again: NetworkSpec<f64> = parse_network(&text).unwrap();
        assert_eq!(spec, again);
    }

    #[test]
    fn malformed_json_is_a_parse_error() {
        let err = parse_network::<f64>("{\"kind\": \"dag\", ").unwrap_err();
        assert!(matches!(err, ModelError::Parse(_)));
    }

    #[test]
    fn unknown_kind() {
        let err = parse_network::<f64>(r#"{"kind":"ring","servers":[]}"#).unwrap_err();
        assert!(matches!(err, ModelError::Parse(_)));
    }

    #[test]
    fn rate_strings() {
        assert_eq!(parse_rate("4/3").unwrap(), 4.0 / 3.0);
        assert_eq!(parse_rate(" 0.25 ").unwrap(), 0.25);
        assert!(parse_rate("1/0").is_err());
        assert!(parse_rate("abc").is_err());
    }
}
