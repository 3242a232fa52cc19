//! Deterministic generator of physics-shaped benchmark datasets.
//!
//! Events carry a handful of jagged particle collections (electrons, muons,
//! jets, ...), global scalars, trigger flags, and enough padding branches to
//! reach a wide schema. Activity is block-structured: the event stream is
//! divided into fixed-length blocks and only a fraction of them contain
//! electrons at all, so a selection anchored on electrons leaves long runs
//! of events — and therefore whole baskets — untouched.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::colfmt::{
    write_dataset, BranchSpec, Codec, ColumnData, ColumnInput, DatasetHeader, ValueType,
};
use crate::error::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSpec {
    pub n_events: u64,
    pub seed: u64,
    pub basket_target: usize,
    pub codec: Codec,
    /// Events per activity block.
    pub block_len: u64,
    /// Fraction of blocks that contain electrons.
    pub active_fraction: f64,
    /// Number of HLT_* boolean branches.
    pub hlt_paths: usize,
    /// Padding scalar branches, to widen the schema.
    pub extra_scalars: usize,
}

impl GenSpec {
    /// The benchmark dataset: 100k events, ~200 branches.
    pub fn reference() -> GenSpec {
        GenSpec {
            n_events: 100_000,
            seed: 20_260_823,
            // Fine-grained baskets (several per activity block) so sparse
            // selections can skip whole baskets.
            basket_target: 8 * 1024,
            codec: Codec::Lz4,
            block_len: 16_384,
            active_fraction: 0.3,
            hlt_paths: 25,
            extra_scalars: 97,
        }
    }

    /// A scaled-down variant for fast integration tests.
    pub fn small() -> GenSpec {
        GenSpec {
            n_events: 4_000,
            seed: 7,
            basket_target: 4 * 1024,
            codec: Codec::Lz4,
            block_len: 512,
            active_fraction: 0.3,
            hlt_paths: 8,
            extra_scalars: 4,
        }
    }
}

/// Mean of an exponential draw.
fn exp(rng: &mut ChaCha8Rng, mean: f64) -> f64 {
    let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    -u.ln() * mean
}

/// Knuth's Poisson sampler; fine for the small lambdas used here.
fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> u32 {
    let l = (-lambda).exp();
    let mut k = 0u32;
    let mut p = 1.0;
    loop {
        p *= rng.random_range(0.0..1.0f64);
        if p <= l {
            return k;
        }
        k += 1;
    }
}

/// One jagged particle collection under construction.
struct Collection {
    name: &'static str,
    lambda: f64,
    pt_mean: f64,
    pt_floor: f64,
    /// Extra f32 fields beyond pt/eta/phi/mass.
    extra_fields: &'static [&'static str],
    counts: Vec<u32>,
    pt: Vec<f32>,
    eta: Vec<f32>,
    phi: Vec<f32>,
    mass: Vec<f32>,
    charge: Vec<i32>,
    extras: Vec<Vec<f32>>,
}

impl Collection {
    fn new(
        name: &'static str,
        lambda: f64,
        pt_mean: f64,
        pt_floor: f64,
        extra_fields: &'static [&'static str],
    ) -> Collection {
        Collection {
            name,
            lambda,
            pt_mean,
            pt_floor,
            extra_fields,
            counts: Vec::new(),
            pt: Vec::new(),
            eta: Vec::new(),
            phi: Vec::new(),
            mass: Vec::new(),
            charge: Vec::new(),
            extras: vec![Vec::new(); extra_fields.len()],
        }
    }

    fn push_event(&mut self, rng: &mut ChaCha8Rng, n_override: Option<u32>) {
        let n = n_override.unwrap_or_else(|| poisson(rng, self.lambda));
        self.counts.push(n);
        for _ in 0..n {
            self.pt.push((self.pt_floor + exp(rng, self.pt_mean)) as f32);
            self.eta.push(rng.random_range(-5.0..5.0f64) as f32);
            self.phi
                .push(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI) as f32);
            self.mass.push(exp(rng, 1.0) as f32);
            self.charge.push(if rng.random_range(0.0..1.0f64) < 0.5 { -1 } else { 1 });
            for col in self.extras.iter_mut() {
                col.push(rng.random_range(0.0..1.0f64) as f32);
            }
        }
    }

    fn counter_name(&self) -> String {
        format!("n{}", self.name)
    }

    fn into_branches(self, schema: &mut Vec<BranchSpec>, columns: &mut Vec<ColumnInput>) {
        let counter = self.counter_name();
        schema.push(BranchSpec::scalar(&counter, ValueType::I32));
        columns.push(ColumnInput::scalar(ColumnData::I32(
            self.counts.iter().map(|&c| c as i32).collect(),
        )));
        let mut jagged = |field: &str, data: ColumnData| {
            schema.push(BranchSpec {
                name: format!("{}_{field}", self.name),
                kind: crate::colfmt::BranchKind::Jagged,
                value_type: data.value_type(),
                counter_branch: Some(counter.clone()),
            });
            columns.push(ColumnInput { data, counts: Some(self.counts.clone()) });
        };
        jagged("pt", ColumnData::F32(self.pt));
        jagged("eta", ColumnData::F32(self.eta));
        jagged("phi", ColumnData::F32(self.phi));
        jagged("mass", ColumnData::F32(self.mass));
        jagged("charge", ColumnData::I32(self.charge));
        for (field, data) in self.extra_fields.iter().zip(self.extras) {
            jagged(field, ColumnData::F32(data));
        }
    }
}

/// Generates the full schema and columns for `spec`.
pub fn generate(spec: &GenSpec) -> (Vec<BranchSpec>, Vec<ColumnInput>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_events as usize;

    let mut collections = vec![
        Collection::new(
            "Electron",
            1.2,
            20.0,
            5.0,
            &["dxy", "dz", "pfRelIso03_all", "sieie", "hoe", "r9"],
        ),
        Collection::new(
            "Muon",
            0.9,
            18.0,
            3.0,
            &["dxy", "dz", "pfRelIso04_all", "segmentComp", "ip3d"],
        ),
        Collection::new(
            "Jet",
            5.5,
            25.0,
            15.0,
            &[
                "btagDeepB",
                "qgl",
                "chHEF",
                "neHEF",
                "chEmEF",
                "neEmEF",
                "muEF",
                "area",
                "rawFactor",
                "jetId",
                "puId",
            ],
        ),
        Collection::new("Tau", 0.4, 22.0, 18.0, &["dxy", "dz", "rawIso"]),
        Collection::new("Photon", 0.7, 15.0, 10.0, &["sieie", "hoe", "r9"]),
        Collection::new("FatJet", 0.3, 60.0, 150.0, &["msoftdrop", "tau21", "tau32"]),
    ];

    // Per-block electron activity; other collections are unaffected.
    let n_blocks = (spec.n_events.div_ceil(spec.block_len.max(1))) as usize;
    let active: Vec<bool> = (0..n_blocks)
        .map(|_| rng.random_range(0.0..1.0f64) < spec.active_fraction)
        .collect();

    let mut met_pt = Vec::with_capacity(n);
    let mut met_phi = Vec::with_capacity(n);
    let mut met_sumet = Vec::with_capacity(n);
    let mut met_sig = Vec::with_capacity(n);
    let mut pv_npvs = Vec::with_capacity(n);
    let mut pv_z = Vec::with_capacity(n);
    let mut pv_ndof = Vec::with_capacity(n);
    let mut run = Vec::with_capacity(n);
    let mut lumi = Vec::with_capacity(n);
    let mut event_id = Vec::with_capacity(n);
    let mut hlt: Vec<Vec<bool>> = vec![Vec::with_capacity(n); spec.hlt_paths];
    let mut extras: Vec<Vec<f32>> = vec![Vec::with_capacity(n); spec.extra_scalars];

    for e in 0..spec.n_events {
        let block_active = active[(e / spec.block_len.max(1)) as usize];
        for (i, c) in collections.iter_mut().enumerate() {
            let n_override = (i == 0 && !block_active).then_some(0);
            c.push_event(&mut rng, n_override);
        }
        met_pt.push(exp(&mut rng, 30.0) as f32);
        met_phi.push(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI) as f32);
        met_sumet.push((200.0 + exp(&mut rng, 300.0)) as f32);
        met_sig.push(rng.random_range(0.0..10.0f64) as f32);
        pv_npvs.push(poisson(&mut rng, 30.0) as i32);
        pv_z.push(rng.random_range(-10.0..10.0f64) as f32);
        pv_ndof.push(rng.random_range(10.0..200.0f64) as f32);
        run.push(380_000 + (e / 50_000) as i32);
        lumi.push((e / 1_000) as i32 + 1);
        event_id.push(e as f64);
        for (p, flags) in hlt.iter_mut().enumerate() {
            // Rarer paths get lower indices; keeps the flag columns sparse.
            let rate = 0.002 + 0.01 * (p as f64 / spec.hlt_paths.max(1) as f64);
            flags.push(rng.random_range(0.0..1.0f64) < rate);
        }
        for col in extras.iter_mut() {
            col.push(rng.random_range(0.0..1.0f64) as f32);
        }
    }

    let mut schema = Vec::new();
    let mut columns = Vec::new();
    for c in collections {
        c.into_branches(&mut schema, &mut columns);
    }
    let mut scalar = |name: String, data: ColumnData| {
        schema.push(BranchSpec::scalar(name, data.value_type()));
        columns.push(ColumnInput::scalar(data));
    };
    scalar("MET_pt".into(), ColumnData::F32(met_pt));
    scalar("MET_phi".into(), ColumnData::F32(met_phi));
    scalar("MET_sumEt".into(), ColumnData::F32(met_sumet));
    scalar("MET_significance".into(), ColumnData::F32(met_sig));
    scalar("PV_npvs".into(), ColumnData::I32(pv_npvs));
    scalar("PV_z".into(), ColumnData::F32(pv_z));
    scalar("PV_ndof".into(), ColumnData::F32(pv_ndof));
    scalar("run".into(), ColumnData::I32(run));
    scalar("luminosityBlock".into(), ColumnData::I32(lumi));
    scalar("event".into(), ColumnData::F64(event_id));
    for (p, flags) in hlt.into_iter().enumerate() {
        scalar(format!("HLT_path{p:03}"), ColumnData::Bool(flags));
    }
    for (i, col) in extras.into_iter().enumerate() {
        scalar(format!("aux_{i:03}"), ColumnData::F32(col));
    }

    (schema, columns)
}

/// Generates and writes a dataset file.
pub fn write_file(spec: &GenSpec, path: impl AsRef<Path>) -> Result<DatasetHeader> {
    let (schema, columns) = generate(spec);
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_dataset(
        &schema,
        &columns,
        spec.n_events,
        spec.basket_target,
        spec.codec,
        &mut file,
    )
}
