use std::path::Path;

use hamroc_core::autoencoder::{grid_search, train as train_model, Architecture, GridSpec, MlpAutoencoder, TrainedModel};
use hamroc_core::control::{actuation_candidates, run_regulation, sample_control_tasks, ControlLog, ControlSummary};
use hamroc_core::dataset::{build_dataset, Dataset, Split};
use hamroc_core::eval::{compression_sweep, evaluate_compressed, evaluate_pointwise, latent_sweep, noise_robustness};
use hamroc_core::io::{file_sha256, read_json, write_json, Table};
use hamroc_core::msd::{generate_network, MassSpringNetwork};
use hamroc_core::reduction::{reconstruct, simulate_reduced, ReducedSystem};
use hamroc_core::sim::{random_initial_configuration, simulate_full, SimParams};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::CliError;

type Outcome = Result<Value, CliError>;

fn is_numerical(e: &hamroc_core::Error) -> bool {
    use hamroc_core::Error as E;
    matches!(
        e,
        E::NumericalBlowup { .. } | E::RankDeficient { .. } | E::RankDeficientJacobian { .. } | E::NotSpd | E::NonFinite(_)
    )
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Write(format!("{}: {e}", dir.display())))?;
    }
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Write(format!("{}: {e}", dir.display())))
}

fn require(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::missing(path, "no such file or directory"))
    }
}

fn hash_of(path: &Path) -> Result<String, CliError> {
    file_sha256(path).map_err(|e| CliError::missing(path, e))
}

fn load_network(path: &Path) -> Result<(MassSpringNetwork, String), CliError> {
    require(path)?;
    let net = read_json(path)?;
    Ok((net, hash_of(path)?))
}

fn load_model(path: &Path, net: Option<&MassSpringNetwork>) -> Result<MlpAutoencoder, CliError> {
    require(path)?;
    let (ae, _) = MlpAutoencoder::load(path)?;
    if let Some(net) = net {
        if ae.input_dim() != net.dof() {
            return Err(CliError::Config(format!(
                "model {} expects {} DOF but the network has {}",
                path.display(),
                ae.input_dim(),
                net.dof()
            )));
        }
    }
    Ok(ae)
}

fn load_dataset(dir: &Path) -> Result<Dataset, CliError> {
    require(dir)?;
    Ok(Dataset::read(dir)?)
}

/// Provenance record written next to (or inside) every output.
fn provenance(path: &Path, command: &str, cfg: &RunConfig, seeds: &Value, inputs: Value) -> Result<(), CliError> {
    let record = json!({
        "command": command,
        "config_hash": cfg.hash(),
        "seeds": seeds,
        "inputs": inputs,
    });
    write_json(path, &record).map_err(|e| CliError::Write(format!("{}: {e}", path.display())))
}

fn run_sidecar(out: &Path) -> std::path::PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".run.json");
    out.with_file_name(name)
}

fn summary(command: &str, cfg: &RunConfig, seeds: Value, outputs: Vec<&Path>, extra: Value) -> Value {
    json!({
        "command": command,
        "config_hash": cfg.hash(),
        "seeds": seeds,
        "outputs": outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "result": extra,
    })
}

pub fn generate(cfg: &RunConfig, out: &Path) -> Outcome {
    let net = generate_network(&cfg.generator)?;
    ensure_parent(out)?;
    write_json(out, &net)?;
    let seeds = json!({ "generator": cfg.generator.seed });
    provenance(&run_sidecar(out), "generate", cfg, &seeds, json!({}))?;
    let extra = json!({ "nodes": net.node_count(), "edges": net.edge_count(), "dof": net.dof(), "sha256": hash_of(out)? });
    Ok(summary("generate", cfg, seeds, vec![out], extra))
}

pub fn simulate(cfg: &RunConfig, network: &Path, out: &Path) -> Outcome {
    let (net, net_hash) = load_network(network)?;
    let s = &cfg.simulation;
    let q0 = random_initial_configuration(&net, s.init_seed, s.init_amplitude)?;
    let traj = simulate_full(&net, &s.gravity()?, &q0, &vec![0.0; net.dof()], &s.params(), None)?;
    ensure_parent(out)?;
    traj.write(out, &net_hash)?;
    let seeds = json!({ "init": s.init_seed });
    provenance(&run_sidecar(out), "simulate", cfg, &seeds, json!({ "network": net_hash }))?;
    Ok(summary("simulate", cfg, seeds, vec![out], json!({ "samples": traj.len() })))
}

pub fn make_dataset(cfg: &RunConfig, network: &Path, out: &Path) -> Outcome {
    let (net, net_hash) = load_network(network)?;
    let data = build_dataset(&net, &cfg.dataset)?;
    ensure_dir(out)?;
    data.write(out, &net_hash)?;
    let seeds = json!({
        "protocol": cfg.dataset.protocol.seed,
        "init": data.simulations.iter().map(|s| s.init_seed).collect::<Vec<_>>(),
    });
    provenance(&out.join("run.json"), "make-dataset", cfg, &seeds, json!({ "network": net_hash }))?;
    let extra = json!({ "train": data.train.len(), "valid": data.valid.len(), "test": data.test.len() });
    Ok(summary("make-dataset", cfg, seeds, vec![out], extra))
}

fn architecture(cfg: &RunConfig, input_dim: usize) -> Architecture {
    let t = &cfg.training;
    match &t.hidden {
        Some(hidden) => Architecture {
            input_dim,
            hidden: hidden.clone(),
            latent_dim: t.latent_dim,
        },
        None => Architecture::proportional(input_dim, t.latent_dim),
    }
}

fn history_table(tm: &TrainedModel) -> Table {
    let mut table = Table::new(["epoch", "train", "valid", "lr"].map(String::from).to_vec());
    let h = &tm.history;
    for (e, ((t, v), lr)) in h.train.iter().zip(&h.valid).zip(&h.lr).enumerate() {
        table.push(vec![e as f64, *t, *v, *lr]);
    }
    table
}

pub fn train(cfg: &RunConfig, dataset: &Path, out: &Path) -> Outcome {
    let data = load_dataset(dataset)?;
    let n = data.train.configurations.first().map_or(0, Vec::len);
    let arch = architecture(cfg, n);
    let t = &cfg.training;
    ensure_parent(out)?;
    let (tm, grid_runs) = if t.grid_search {
        let res = grid_search(&arch, &data.train.configurations, &data.valid.configurations, &t.hyper, &t.grid)?;
        (res.best, Some((res.runs, res.best_index)))
    } else {
        let ae = MlpAutoencoder::random(&arch, t.hyper.seed)?;
        (train_model(ae, &data.train.configurations, &data.valid.configurations, &t.hyper)?, None)
    };
    tm.model.save(out, Some(tm.config.clone()), Some(tm.history.clone()))?;
    let hist = crate::sibling(out, "_history");
    history_table(&tm).write(&hist)?;
    let mut outputs = vec![out, hist.as_path()];
    let grid_path = out.with_file_name(format!(
        "{}_grid.json",
        out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    ));
    if let Some((runs, best)) = &grid_runs {
        write_json(&grid_path, &json!({ "runs": runs, "best_index": best }))?;
        outputs.push(&grid_path);
    }
    let seeds = json!({ "training": t.hyper.seed, "dataset": data.seed });
    let mut inputs = json!({});
    for split in ["train", "valid", "test"] {
        inputs[split] = json!(hash_of(&dataset.join(format!("{split}.csv")))?);
    }
    provenance(&run_sidecar(out), "train", cfg, &seeds, inputs)?;
    let extra = json!({
        "latent_dim": arch.latent_dim,
        "final_train": tm.final_train(),
        "final_valid": tm.final_valid(),
        "grid_points": grid_runs.as_ref().map(|(r, _)| r.len()),
    });
    Ok(summary("train", cfg, seeds, outputs, extra))
}

fn latent_params(cfg: &RunConfig) -> SimParams {
    let mut p = cfg.simulation.params();
    if let Some(dt) = cfg.reduction.dt {
        p.dt = dt;
    }
    if let Some(s) = cfg.reduction.sample_dt {
        p.sample_dt = s;
    }
    p
}

pub fn rom_sim(cfg: &RunConfig, network: &Path, model: &Path, out: &Path, latent_out: &Path) -> Outcome {
    let (net, net_hash) = load_network(network)?;
    let ae = load_model(model, Some(&net))?;
    let s = &cfg.simulation;
    let rs = ReducedSystem::new(&net, s.gravity()?, &ae)?;
    let q0 = random_initial_configuration(&net, s.init_seed, s.init_amplitude)?;
    let (xi0, pi0) = rs.latent_state_of(&q0, &vec![0.0; net.dof()])?;
    let lt = simulate_reduced(&rs, &xi0, &pi0, &latent_params(cfg), None)?;
    let rec = reconstruct(&rs, &lt)?;
    ensure_parent(out)?;
    ensure_parent(latent_out)?;
    lt.write(latent_out, &net_hash)?;
    rec.write(out, &net_hash)?;
    let seeds = json!({ "init": s.init_seed });
    let inputs = json!({ "network": net_hash, "model": hash_of(model)? });
    provenance(&run_sidecar(out), "rom-sim", cfg, &seeds, inputs.clone())?;
    provenance(&run_sidecar(latent_out), "rom-sim", cfg, &seeds, inputs)?;
    Ok(summary("rom-sim", cfg, seeds, vec![out, latent_out], json!({ "samples": lt.len() })))
}

pub fn control(cfg: &RunConfig, network: &Path, model: &Path, dataset: &Path, out: &Path) -> Outcome {
    let (net, net_hash) = load_network(network)?;
    let ae = load_model(model, Some(&net))?;
    let data = load_dataset(dataset)?;
    let mut targets = data.train.configurations.clone();
    targets.extend(data.valid.configurations.iter().cloned());
    let c = &cfg.control;
    c.validate()?;
    let grav = c.gravity()?;
    let rs = ReducedSystem::new(&net, grav, &ae)?;
    let candidates = actuation_candidates(&net, c.n_candidates);
    let tasks = sample_control_tasks(&targets, &candidates, c.n_tasks, c.seed, c.alpha, c.beta, c.duration)?;
    ensure_dir(out)?;
    // A diverging task is a result, not a reason to drop the rest of the batch.
    let mut logs: Vec<ControlLog> = Vec::new();
    let mut records = Vec::new();
    for (i, task) in tasks.iter().enumerate() {
        let mut entry = json!({ "task": i, "actuated_node": task.actuated_node, "alpha": task.alpha, "beta": task.beta });
        match run_regulation(&net, &grav, &rs, task, c.dt, c.sample_dt, c.options) {
            Ok(log) => {
                let file = format!("control_{i:03}.csv");
                log.write(&out.join(&file))?;
                entry["status"] = json!("ok");
                entry["file"] = json!(file);
                logs.push(log);
            }
            Err(e) if is_numerical(&e) => {
                entry["status"] = json!("failed");
                entry["error"] = json!(e.to_string());
            }
            Err(e) => return Err(e.into()),
        }
        records.push(entry);
    }
    write_json(&out.join("tasks.json"), &records)?;
    if logs.is_empty() && !tasks.is_empty() {
        return Err(CliError::Numerical(format!(
            "all {} control tasks failed; see {}",
            tasks.len(),
            out.join("tasks.json").display()
        )));
    }
    let s = ControlSummary::from_logs(&logs);
    s.write(&out.join("summary.json"))?;
    let seeds = json!({ "control": cfg.control.seed });
    let inputs = json!({ "network": net_hash, "model": hash_of(model)? });
    provenance(&out.join("run.json"), "control", cfg, &seeds, inputs)?;
    Ok(summary("control", cfg, seeds, vec![out], json!({ "tasks": tasks.len(), "failed": tasks.len() - logs.len(), "median_final_ratio": s.median_final_ratio })))
}

pub fn eval(cfg: &RunConfig, network: &Path, model: &Path, dataset: &Path, out: &Path, (pointwise, compressed): (bool, bool)) -> Outcome {
    let (net, net_hash) = load_network(network)?;
    let ae = load_model(model, Some(&net))?;
    let data = load_dataset(dataset)?;
    let trajs = data.trajectories_in(Split::Test);
    let trajs = &trajs[..cfg.eval.n_trajectories.min(trajs.len())];
    ensure_dir(out)?;
    let system = &cfg.eval.system;
    let mut extra = json!({ "trajectories": trajs.len() });
    if pointwise {
        let r = evaluate_pointwise(&net, &ae, trajs)?;
        r.write(out, system)?;
        extra["pointwise"] = json!(r.summary);
    }
    if compressed {
        let r = evaluate_compressed(&net, &ae, trajs)?;
        r.write(out, system)?;
        extra["compressed"] = json!(r.summary);
    }
    let seeds = json!({ "dataset": data.seed });
    let inputs = json!({ "network": net_hash, "model": hash_of(model)? });
    provenance(&out.join("run.json"), "eval", cfg, &seeds, inputs)?;
    Ok(summary("eval", cfg, seeds, vec![out], extra))
}

pub fn sweep_sizes(cfg: &RunConfig, dataset: &Path, out: &Path) -> Outcome {
    let data = load_dataset(dataset)?;
    let t = &cfg.training;
    let grid = if t.grid_search {
        t.grid.clone()
    } else {
        GridSpec {
            lr: vec![t.hyper.lr],
            weight_decay: vec![t.hyper.weight_decay],
            lr_gamma: vec![t.hyper.lr_gamma],
            lr_step: vec![t.hyper.lr_step],
        }
    };
    let res = compression_sweep(
        &data.train.configurations,
        &data.valid.configurations,
        &data.test.configurations,
        &cfg.eval.latent_sizes,
        &t.hyper,
        &grid,
    )?;
    ensure_dir(out)?;
    let mut table = Table::new(["latent_dim", "valid_mse", "test_mse"].map(String::from).to_vec());
    for (row, model) in res.rows.iter().zip(&res.models) {
        table.push(vec![row.latent_dim as f64, row.valid_mse, row.test_mse]);
        model.save(&out.join(format!("model_m{}.json", row.latent_dim)), Some(row.best.config.clone()), None)?;
    }
    table.write(&out.join("sizes.csv"))?;
    write_json(&out.join("sizes.json"), &res.report(t.hyper.seed))?;
    let seeds = json!({ "training": t.hyper.seed, "dataset": data.seed });
    provenance(&out.join("run.json"), "sweep", cfg, &seeds, json!({ "kind": "sizes" }))?;
    Ok(summary("sweep", cfg, seeds, vec![out], json!({ "spearman": res.spearman })))
}

fn sweep_model(model: Option<&Path>) -> Result<(MlpAutoencoder, String), CliError> {
    let path = model.ok_or_else(|| CliError::Config("this sweep needs --model".into()))?;
    Ok((load_model(path, None)?, hash_of(path)?))
}

pub fn sweep_sigmas(cfg: &RunConfig, dataset: &Path, out: &Path, model: Option<&Path>) -> Outcome {
    let (ae, model_hash) = sweep_model(model)?;
    let data = load_dataset(dataset)?;
    let rows = noise_robustness(&ae, &data.test.configurations, &cfg.eval.noise_sigmas, &cfg.eval.noise_seeds)?;
    ensure_dir(out)?;
    let mut table = Table::new(["sigma", "mse"].map(String::from).to_vec());
    for r in &rows {
        table.push(vec![r.sigma, r.mse]);
    }
    table.write(&out.join("sigmas.csv"))?;
    write_json(&out.join("sigmas.json"), &rows)?;
    let seeds = json!({ "noise": cfg.eval.noise_seeds });
    provenance(&out.join("run.json"), "sweep", cfg, &seeds, json!({ "kind": "sigmas", "model": model_hash }))?;
    Ok(summary("sweep", cfg, seeds, vec![out], json!({ "mse": rows.iter().map(|r| r.mse).collect::<Vec<_>>() })))
}

pub fn sweep_fractions(cfg: &RunConfig, dataset: &Path, out: &Path, model: Option<&Path>) -> Outcome {
    let (ae, model_hash) = sweep_model(model)?;
    let data = load_dataset(dataset)?;
    let bases = &data.test.configurations[..cfg.eval.latent_bases.min(data.test.len())];
    let mut population = data.train.configurations.clone();
    population.extend(data.valid.configurations.iter().cloned());
    population.extend(data.test.configurations.iter().cloned());
    let alts = latent_sweep(&ae, bases, &population, &cfg.eval.latent_fractions)?;
    ensure_dir(out)?;
    write_json(&out.join("fractions.json"), &alts)?;
    let seeds = json!({ "dataset": data.seed });
    provenance(&out.join("run.json"), "sweep", cfg, &seeds, json!({ "kind": "fractions", "model": model_hash }))?;
    Ok(summary("sweep", cfg, seeds, vec![out], json!({ "alterations": alts.len() })))
}
