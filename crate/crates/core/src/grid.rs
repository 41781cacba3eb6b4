//! Electrical network: buses, lines, controllable devices and the matrices
//! derived from the topology (adjacency, graph Laplacian, bus admittance).
//!
//! Quantities at the file boundary are kW, kVAr and ohms; everything held in
//! a [`GridNetwork`] is per-unit on the network's single system base.

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{parse_json, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Load,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bus {
    pub id: usize,
    pub name: String,
    pub kind: BusKind,
    /// Voltage magnitude setpoint (used for the slack bus), p.u.
    pub v_nominal: f64,
    pub theta_nominal: f64,
    pub p_load: f64,
    pub q_load: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    /// Total line-charging susceptance, split half at each end.
    pub b_shunt: f64,
}

impl Line {
    pub fn series_admittance(&self) -> Complex64 {
        Complex64::new(1.0, 0.0) / Complex64::new(self.r, self.x)
    }
}

/// Box limits of one controllable device, per-unit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerBox {
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
}

impl PowerBox {
    /// The four-quadrant box `[-s, s] x [-s, s]`.
    pub fn symmetric(s_max: f64) -> Self {
        Self {
            p_min: -s_max,
            p_max: s_max,
            q_min: -s_max,
            q_max: s_max,
        }
    }

    pub fn clip(&self, p: f64, q: f64) -> (f64, f64) {
        (p.clamp(self.p_min, self.p_max), q.clamp(self.q_min, self.q_max))
    }

    pub fn contains(&self, p: f64, q: f64) -> bool {
        (self.p_min..=self.p_max).contains(&p) && (self.q_min..=self.q_max).contains(&q)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControllableDevice {
    pub bus: usize,
    pub s_max: f64,
    pub limits: PowerBox,
}

impl ControllableDevice {
    pub fn symmetric(bus: usize, s_max: f64) -> Self {
        Self {
            bus,
            s_max,
            limits: PowerBox::symmetric(s_max),
        }
    }
}

/// Immutable network model. Communication topology equals the electrical one.
#[derive(Clone, Debug)]
pub struct GridNetwork {
    pub name: String,
    pub base_mva: f64,
    pub base_kv: f64,
    buses: Vec<Bus>,
    lines: Vec<Line>,
    devices: Vec<ControllableDevice>,
    slack_id: usize,
    adjacency: DMatrix<f64>,
    admittance: DMatrix<Complex64>,
    laplacian: DMatrix<f64>,
    neighbor_lists: Vec<Vec<usize>>,
}

impl GridNetwork {
    pub fn new(
        name: impl Into<String>,
        buses: Vec<Bus>,
        lines: Vec<Line>,
        devices: Vec<ControllableDevice>,
    ) -> Result<Self> {
        Self::with_base(name, buses, lines, devices, 1.0, 0.4)
    }

    pub fn with_base(
        name: impl Into<String>,
        buses: Vec<Bus>,
        lines: Vec<Line>,
        devices: Vec<ControllableDevice>,
        base_mva: f64,
        base_kv: f64,
    ) -> Result<Self> {
        let n = buses.len();
        if n == 0 {
            return Err(Error::InvalidNetwork("network has no buses".into()));
        }
        for (i, bus) in buses.iter().enumerate() {
            if bus.id != i {
                return Err(Error::InvalidNetwork(format!(
                    "buses[{i}].id is {} but bus ids must be 0..n in order",
                    bus.id
                )));
            }
            if bus.p_load < 0.0 || bus.q_load < 0.0 {
                return Err(Error::InvalidNetwork(format!(
                    "buses[{i}] has negative demand; loads are consumption (>= 0)"
                )));
            }
        }
        let slacks: Vec<usize> = buses
            .iter()
            .filter(|b| b.kind == BusKind::Slack)
            .map(|b| b.id)
            .collect();
        let slack_id = match slacks.as_slice() {
            [s] => *s,
            _ => {
                return Err(Error::InvalidNetwork(format!(
                    "exactly one slack bus required, found {}",
                    slacks.len()
                )))
            }
        };
        for (k, line) in lines.iter().enumerate() {
            if line.from >= n || line.to >= n {
                return Err(Error::InvalidNetwork(format!(
                    "lines[{k}] references bus outside 0..{n}"
                )));
            }
            if line.from == line.to {
                return Err(Error::InvalidNetwork(format!("lines[{k}] is a self-loop")));
            }
            if line.r < 0.0 {
                return Err(Error::InvalidNetwork(format!("lines[{k}].r is negative")));
            }
        }
        for (k, dev) in devices.iter().enumerate() {
            if dev.bus >= n {
                return Err(Error::InvalidNetwork(format!(
                    "devices[{k}].bus {} is not a bus",
                    dev.bus
                )));
            }
            if dev.bus == slack_id {
                return Err(Error::InvalidNetwork(format!(
                    "devices[{k}] sits on the slack bus"
                )));
            }
            if !(dev.s_max > 0.0) {
                return Err(Error::InvalidNetwork(format!(
                    "devices[{k}].s_max must be positive"
                )));
            }
            let l = dev.limits;
            if !(l.p_min <= l.p_max && l.q_min <= l.q_max) {
                return Err(Error::InvalidNetwork(format!(
                    "devices[{k}] has an empty power box"
                )));
            }
        }
        let mut seen = vec![false; n];
        for (k, dev) in devices.iter().enumerate() {
            if std::mem::replace(&mut seen[dev.bus], true) {
                return Err(Error::InvalidNetwork(format!(
                    "devices[{k}] duplicates bus {}",
                    dev.bus
                )));
            }
        }

        let admittance = build_admittance(&lines, n)?;
        let adjacency = adjacency(&lines, n);
        let laplacian = graph_laplacian(&adjacency);
        let neighbor_lists = (0..n)
            .map(|i| (0..n).filter(|&j| adjacency[(i, j)] != 0.0).collect())
            .collect::<Vec<Vec<usize>>>();
        if !is_connected(&neighbor_lists) {
            return Err(Error::InvalidNetwork("network graph is not connected".into()));
        }

        Ok(Self {
            name: name.into(),
            base_mva,
            base_kv,
            buses,
            lines,
            devices,
            slack_id,
            adjacency,
            admittance,
            laplacian,
            neighbor_lists,
        })
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn devices(&self) -> &[ControllableDevice] {
        &self.devices
    }

    pub fn slack_id(&self) -> usize {
        self.slack_id
    }

    pub fn slack_voltage(&self) -> f64 {
        self.buses[self.slack_id].v_nominal
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn admittance(&self) -> &DMatrix<Complex64> {
        &self.admittance
    }

    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    pub fn device_at(&self, bus: usize) -> Option<&ControllableDevice> {
        self.devices.iter().find(|d| d.bus == bus)
    }

    pub fn neighbors(&self, i: usize) -> Result<&[usize]> {
        self.neighbor_lists
            .get(i)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownBus(i))
    }

    pub fn neighbor_lists(&self) -> &[Vec<usize>] {
        &self.neighbor_lists
    }

    pub fn p_loads(&self) -> Vec<f64> {
        self.buses.iter().map(|b| b.p_load).collect()
    }

    pub fn q_loads(&self) -> Vec<f64> {
        self.buses.iter().map(|b| b.q_load).collect()
    }

    /// Per-unit power to kW (or kVAr).
    pub fn to_kw(&self, pu: f64) -> f64 {
        pu * self.base_mva * 1000.0
    }

    pub fn from_kw(&self, kw: f64) -> f64 {
        kw / (self.base_mva * 1000.0)
    }

    pub fn max_degree(&self) -> usize {
        self.neighbor_lists.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: NetworkFile = parse_json(text, "network file")?;
        file.into_network()
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let file: NetworkFile = parse_json(&text, &path.display().to_string())?;
        file.into_network()
    }
}

/// Nodal admittance matrix `Y = G + jB`.
///
/// Off-diagonals are `-y_ij`, diagonals the sum of incident series
/// admittances plus half of each incident line's charging susceptance.
pub fn build_admittance(lines: &[Line], n: usize) -> Result<DMatrix<Complex64>> {
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for (index, line) in lines.iter().enumerate() {
        if line.r == 0.0 && line.x == 0.0 {
            return Err(Error::ZeroImpedance {
                index,
                from: line.from,
                to: line.to,
            });
        }
        if line.from >= n || line.to >= n {
            return Err(Error::UnknownBus(line.from.max(line.to)));
        }
        let ys = line.series_admittance();
        let half_shunt = Complex64::new(0.0, line.b_shunt / 2.0);
        let (a, b) = (line.from, line.to);
        y[(a, a)] += ys + half_shunt;
        y[(b, b)] += ys + half_shunt;
        y[(a, b)] -= ys;
        y[(b, a)] -= ys;
    }
    Ok(y)
}

pub fn adjacency(lines: &[Line], n: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(n, n);
    for line in lines {
        if line.from != line.to {
            a[(line.from, line.to)] = 1.0;
            a[(line.to, line.from)] = 1.0;
        }
    }
    a
}

/// `L = D - A`.
pub fn graph_laplacian(adjacency: &DMatrix<f64>) -> DMatrix<f64> {
    let n = adjacency.nrows();
    let mut l = -adjacency.clone();
    for i in 0..n {
        l[(i, i)] = adjacency.row(i).sum();
    }
    l
}

fn is_connected(neighbors: &[Vec<usize>]) -> bool {
    let n = neighbors.len();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(i) = queue.pop_front() {
        for &j in &neighbors[i] {
            if !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// On-disk network description (JSON).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub notes: Vec<String>,
    pub base_mva: f64,
    pub base_kv: f64,
    pub slack_id: usize,
    #[serde(default = "one")]
    pub slack_voltage_pu: f64,
    pub buses: Vec<BusRecord>,
    pub lines: Vec<LineRecord>,
    #[serde(default)]
    pub devices: Vec<DeviceRecord>,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusRecord {
    pub id: usize,
    #[serde(default)]
    pub name: String,
    pub kind: BusKind,
    #[serde(default)]
    pub p_load_kw: f64,
    #[serde(default)]
    pub q_load_kvar: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineRecord {
    pub from: usize,
    pub to: usize,
    pub r_ohm: f64,
    pub x_ohm: f64,
    /// Total shunt susceptance in siemens.
    #[serde(default)]
    pub b_shunt_s: f64,
    #[serde(default)]
    pub note: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceRecord {
    pub bus: usize,
    pub s_max_kva: f64,
    #[serde(default)]
    pub p_min_kw: Option<f64>,
    #[serde(default)]
    pub p_max_kw: Option<f64>,
    #[serde(default)]
    pub q_min_kvar: Option<f64>,
    #[serde(default)]
    pub q_max_kvar: Option<f64>,
}

impl NetworkFile {
    pub fn into_network(self) -> Result<GridNetwork> {
        if !(self.base_mva > 0.0) {
            return Err(Error::InvalidNetwork("base_mva must be positive".into()));
        }
        if !(self.base_kv > 0.0) {
            return Err(Error::InvalidNetwork("base_kv must be positive".into()));
        }
        let s_base_kva = self.base_mva * 1000.0;
        let z_base = self.base_kv * self.base_kv / self.base_mva;

        if self.slack_id >= self.buses.len() {
            return Err(Error::InvalidNetwork(format!(
                "slack_id {} is not a bus",
                self.slack_id
            )));
        }
        if self.buses[self.slack_id].kind != BusKind::Slack {
            return Err(Error::InvalidNetwork(format!(
                "slack_id {} does not point at a bus of kind \"slack\"",
                self.slack_id
            )));
        }

        let buses = self
            .buses
            .iter()
            .map(|b| Bus {
                id: b.id,
                name: b.name.clone(),
                kind: b.kind,
                v_nominal: if b.kind == BusKind::Slack {
                    self.slack_voltage_pu
                } else {
                    1.0
                },
                theta_nominal: 0.0,
                p_load: b.p_load_kw / s_base_kva,
                q_load: b.q_load_kvar / s_base_kva,
            })
            .collect();

        let mut lines = Vec::with_capacity(self.lines.len());
        for (k, l) in self.lines.iter().enumerate() {
            if l.r_ohm == 0.0 && l.x_ohm == 0.0 {
                return Err(Error::InvalidNetwork(format!(
                    "lines[{k}].r_ohm and lines[{k}].x_ohm are both zero"
                )));
            }
            if l.r_ohm < 0.0 {
                return Err(Error::InvalidNetwork(format!("lines[{k}].r_ohm is negative")));
            }
            lines.push(Line {
                from: l.from,
                to: l.to,
                r: l.r_ohm / z_base,
                x: l.x_ohm / z_base,
                b_shunt: l.b_shunt_s * z_base,
            });
        }

        let devices = self
            .devices
            .iter()
            .map(|d| {
                let s_max = d.s_max_kva / s_base_kva;
                let pu = |v: Option<f64>, default: f64| v.map_or(default, |kw| kw / s_base_kva);
                ControllableDevice {
                    bus: d.bus,
                    s_max,
                    limits: PowerBox {
                        p_min: pu(d.p_min_kw, -s_max),
                        p_max: pu(d.p_max_kw, s_max),
                        q_min: pu(d.q_min_kvar, -s_max),
                        q_max: pu(d.q_max_kvar, s_max),
                    },
                }
            })
            .collect();

        GridNetwork::with_base(self.name, buses, lines, devices, self.base_mva, self.base_kv)
    }
}

/// The shipped 44-bus CIGRE LV benchmark reconstruction.
pub const SHIPPED_NETWORK_JSON: &str = include_str!("../../../data/cigre_lv_44.json");

pub fn shipped_network() -> GridNetwork {
    GridNetwork::from_json_str(SHIPPED_NETWORK_JSON).expect("shipped network file is valid")
}
