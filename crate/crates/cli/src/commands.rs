//! Subcommand implementations. All outputs are written atomically (tempfile
//! in the target directory, then rename), so re-running a command with the
//! same inputs overwrites its outputs cleanly.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::json;

use vrl_core::action_graph::{build_graph as build, PhraseCounts, SemanticGraph};
use vrl_core::agent::{
    metrics_csv, random_walk_episode, train as train_model, Agent, Mode, PolicyVariant,
};
use vrl_core::config::OptimizerKind;
use vrl_core::eval::{evaluate_scenes, rank_predictions, zero_shot_split, EvalReport, Prediction};
use vrl_core::features::SyntheticProvider;
use vrl_core::qlearn::{load_checkpoint, save_checkpoint, Optimizer, QModel, HEAD_ATTR, HEAD_CAT, HEAD_PRED};
use vrl_core::rng::substream_indexed;
use vrl_core::scene_io::{load_scenes, save_scenes};
use vrl_core::synth::{generate_scene_set, SynthParams};
use vrl_core::Scene;

use crate::manifest::RunManifest;
use crate::runcfg::RunConfig;

type CmdResult = Result<(), String>;

/// Print to stdout, ignoring a closed pipe (e.g. output piped to `head`).
fn print_stdout(text: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout(), "{text}");
}

fn atomic_write(path: &Path, bytes: &[u8]) -> CmdResult {
    let dir = path.parent().unwrap_or(Path::new("."));
    let tmp = tempfile_path(dir);
    std::fs::write(&tmp, bytes).map_err(|e| format!("{}: {e}", tmp.display()))?;
    if let Err(e) = std::fs::rename(&tmp, path) {
        let _ = std::fs::remove_file(&tmp);
        return Err(format!("{}: {e}", path.display()));
    }
    Ok(())
}

fn tempfile_path(dir: &Path) -> PathBuf {
    dir.join(format!(".vrl-tmp-{}", std::process::id()))
}

fn read_graph(path: &Path) -> Result<SemanticGraph, String> {
    SemanticGraph::load(path).map_err(|e| e.to_string())
}

fn read_scenes(
    path: &Path,
    graph: &SemanticGraph,
    cap: Option<usize>,
) -> Result<Vec<Scene>, String> {
    load_scenes(path, graph, cap).map_err(|e| e.to_string())
}

pub fn build_graph(counts: &Path, min_count: u64, out: &Path) -> CmdResult {
    let counts = PhraseCounts::from_path(counts).map_err(|e| e.to_string())?;
    let graph = build(&counts, min_count).map_err(|e| e.to_string())?;
    let tmp = tempfile_path(out.parent().unwrap_or(Path::new(".")));
    graph.save(&tmp).map_err(|e| e.to_string())?;
    std::fs::rename(&tmp, out).map_err(|e| format!("{}: {e}", out.display()))?;
    let stats = graph.stats();
    print_stdout(&serde_json::to_string_pretty(&stats).map_err(|e| e.to_string())?);
    Ok(())
}

pub fn gen_scenes(
    graph: &Path,
    seed: u64,
    count: usize,
    params: Option<&Path>,
    out: &Path,
) -> CmdResult {
    let graph = read_graph(graph)?;
    let params = match params {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            toml::from_str::<SynthParams>(&text).map_err(|e| format!("{}: {e}", p.display()))?
        }
        None => SynthParams::default(),
    };
    let scenes = generate_scene_set(&graph, seed, count, &params).map_err(|e| e.to_string())?;
    let tmp = tempfile_path(out.parent().unwrap_or(Path::new(".")));
    save_scenes(&tmp, &scenes, &graph).map_err(|e| e.to_string())?;
    std::fs::rename(&tmp, out).map_err(|e| format!("{}: {e}", out.display()))?;
    eprintln!("wrote {} scenes to {}", scenes.len(), out.display());
    Ok(())
}

pub fn train(config_path: &Path, out_dir: Option<&Path>) -> CmdResult {
    let mut cfg = RunConfig::load(config_path)?;
    if let Some(dir) = out_dir {
        cfg.out_dir = dir.to_path_buf();
    }
    let variant = cfg.variant()?;
    let graph = read_graph(&cfg.graph)?;
    let scenes = read_scenes(&cfg.scenes, &graph, cfg.instance_cap)?;
    let feat = cfg.feature_config();
    let provider = SyntheticProvider::new(feat, cfg.seed);
    let agent = Agent::new(&graph, &provider, feat, variant, cfg.seed);
    let out = train_model(&scenes, &agent, &cfg.train, cfg.seed).map_err(|e| e.to_string())?;

    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| format!("{}: {e}", cfg.out_dir.display()))?;
    atomic_write(
        &cfg.out_dir.join("metrics.csv"),
        metrics_csv(&out.metrics).as_bytes(),
    )?;
    let opt = match cfg.train.optimizer {
        OptimizerKind::Sgd => Optimizer::sgd(),
        OptimizerKind::RmsProp => Optimizer::new(
            OptimizerKind::RmsProp,
            cfg.train.rms_decay,
            cfg.train.rms_eps,
        ),
    };
    let ckpt_tmp = tempfile_path(&cfg.out_dir);
    save_checkpoint(&ckpt_tmp, &out.model, &opt, out.global_steps).map_err(|e| e.to_string())?;
    let ckpt = cfg.out_dir.join("model.ckpt");
    std::fs::rename(&ckpt_tmp, &ckpt).map_err(|e| format!("{}: {e}", ckpt.display()))?;

    let manifest = RunManifest::create(
        config_path,
        cfg.seed,
        &cfg.variant,
        &cfg.graph,
        &cfg.scenes,
        &cfg.out_dir,
    )?;
    atomic_write(
        &cfg.out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)
            .map_err(|e| e.to_string())?
            .as_bytes(),
    )?;
    let last = out.metrics.last().unwrap();
    eprintln!(
        "trained {variant} for {} epochs ({} steps); final val recall50 rel {:.4} attr {:.4}; outputs in {}",
        cfg.train.epochs,
        out.global_steps,
        last.recall50_rel,
        last.recall50_attr,
        cfg.out_dir.display()
    );
    Ok(())
}

fn eval_model(
    agent: &Agent<'_>,
    model: &QModel,
    scenes: &[Scene],
    seed: u64,
    max_steps: usize,
    jobs: usize,
    zero_shot: Option<&vrl_core::ZeroShotSplit>,
) -> Result<EvalReport, String> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| e.to_string())?;
    let ranked: Result<Vec<Vec<Prediction>>, String> = pool.install(|| {
        scenes
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let mut rng = substream_indexed(seed, "test-eval", i as u64);
                let episode = agent
                    .run_episode(s, model, Mode::Eval, 0.0, &mut rng, max_steps)
                    .map_err(|e| e.to_string())?;
                Ok(rank_predictions(episode.log.predictions))
            })
            .collect()
    });
    Ok(evaluate_scenes(scenes, &ranked?, zero_shot))
}

pub fn evaluate(
    config_path: &Path,
    model: Option<&Path>,
    scenes: Option<&Path>,
    train_scenes: Option<&Path>,
    jobs: usize,
    out: Option<&Path>,
) -> CmdResult {
    let cfg = RunConfig::load(config_path)?;
    let variant = cfg.variant()?;
    let graph = read_graph(&cfg.graph)?;
    let scene_path = scenes.map(Path::to_path_buf).unwrap_or(cfg.scenes.clone());
    let scenes = read_scenes(&scene_path, &graph, cfg.instance_cap)?;
    let split = match train_scenes {
        Some(p) => Some(zero_shot_split(
            &read_scenes(p, &graph, cfg.instance_cap)?,
            &scenes,
        )),
        None => None,
    };
    let feat = cfg.feature_config();
    let provider = SyntheticProvider::new(feat, cfg.seed);
    let agent = Agent::new(&graph, &provider, feat, variant, cfg.seed);
    let ckpt = match model {
        Some(p) => p.to_path_buf(),
        None => {
            // The default checkpoint comes from a training run: re-verify the
            // input hashes its manifest recorded before trusting it.
            let manifest_path = cfg.out_dir.join("manifest.json");
            if manifest_path.exists() {
                RunManifest::load_verified(&manifest_path)?;
            }
            cfg.out_dir.join("model.ckpt")
        }
    };
    let (model, _, _) = load_checkpoint(&ckpt).map_err(|e| e.to_string())?;
    if model.cfg.state_dim != agent.state_dim() {
        return Err(format!(
            "{}: checkpoint state dim {} does not match config state dim {}",
            ckpt.display(),
            model.cfg.state_dim,
            agent.state_dim()
        ));
    }
    let report = eval_model(
        &agent,
        &model,
        &scenes,
        cfg.seed,
        cfg.train.max_steps,
        jobs,
        split.as_ref(),
    )?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?;
    match out {
        Some(path) => atomic_write(path, format!("{text}\n").as_bytes())?,
        None => print_stdout(&text),
    }
    Ok(())
}

pub fn ablate(
    config_path: &Path,
    test_scenes: &Path,
    seeds: u64,
    jobs: usize,
    out: Option<&Path>,
) -> CmdResult {
    if seeds == 0 {
        return Err("--seeds must be >= 1".into());
    }
    let cfg = RunConfig::load(config_path)?;
    let graph = read_graph(&cfg.graph)?;
    let train_scenes = read_scenes(&cfg.scenes, &graph, cfg.instance_cap)?;
    let test = read_scenes(test_scenes, &graph, cfg.instance_cap)?;
    let feat = cfg.feature_config();

    let variants = [
        PolicyVariant::Vrl,
        PolicyVariant::FlatRl,
        PolicyVariant::NoAmbiguity,
        PolicyVariant::RandomWalk,
    ];
    let mut csv = String::from(
        "variant,seed,recall50_rel,recall100_rel,recall50_attr,recall50_phrase\n",
    );
    for variant in variants {
        for s in 0..seeds {
            let seed = cfg.seed + s;
            let report = match variant {
                PolicyVariant::RandomWalk => {
                    let ranked: Vec<_> = test
                        .iter()
                        .enumerate()
                        .map(|(i, scene)| {
                            let mut rng = substream_indexed(seed, "random-walk", i as u64);
                            random_walk_episode(&graph, scene, &mut rng)
                                .map(|log| rank_predictions(log.predictions))
                                .map_err(|e| e.to_string())
                        })
                        .collect::<Result<_, _>>()?;
                    evaluate_scenes(&test, &ranked, None)
                }
                _ => {
                    let provider = SyntheticProvider::new(feat, seed);
                    let agent = Agent::new(&graph, &provider, feat, variant, seed);
                    let trained = train_model(&train_scenes, &agent, &cfg.train, seed)
                        .map_err(|e| e.to_string())?;
                    eval_model(
                        &agent,
                        &trained.model,
                        &test,
                        seed,
                        cfg.train.max_steps,
                        jobs,
                        None,
                    )?
                }
            };
            eprintln!(
                "{variant} seed {seed}: rel50 {:.4} attr50 {:.4}",
                report.recall50_relationship, report.recall50_attribute
            );
            csv.push_str(&format!(
                "{variant},{seed},{:.6},{:.6},{:.6},{:.6}\n",
                report.recall50_relationship,
                report.recall100_relationship,
                report.recall50_attribute,
                report.recall50_phrase
            ));
        }
    }
    match out {
        Some(path) => atomic_write(path, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    Ok(())
}

pub fn inspect(
    config_path: &Path,
    model: Option<&Path>,
    scenes: Option<&Path>,
    scene_index: usize,
) -> CmdResult {
    let cfg = RunConfig::load(config_path)?;
    let variant = cfg.variant()?;
    let graph = read_graph(&cfg.graph)?;
    let scene_path = scenes.map(Path::to_path_buf).unwrap_or(cfg.scenes.clone());
    let scenes = read_scenes(&scene_path, &graph, cfg.instance_cap)?;
    let scene = scenes.get(scene_index).ok_or(format!(
        "scene index {scene_index} out of range ({} scenes in {})",
        scenes.len(),
        scene_path.display()
    ))?;
    let feat = cfg.feature_config();
    let provider = SyntheticProvider::new(feat, cfg.seed);
    let agent = Agent::new(&graph, &provider, feat, variant, cfg.seed);
    let q_model = match model {
        Some(p) => load_checkpoint(p).map_err(|e| e.to_string())?.0,
        None => QModel::new(agent.q_config(cfg.train.hidden.clone()), cfg.seed),
    };
    let mut rng = substream_indexed(cfg.seed, "inspect", scene_index as u64);
    let episode = agent
        .run_episode(scene, &q_model, Mode::Eval, 0.0, &mut rng, cfg.train.max_steps)
        .map_err(|e| e.to_string())?;

    let name = |r: vrl_core::Result<&str>| r.map(str::to_string).map_err(|e| e.to_string());
    let mut steps = Vec::new();
    for st in &episode.log.steps {
        let attr_action = if st.actions[HEAD_ATTR] == graph.n_attributes() {
            "null".to_string()
        } else {
            name(graph.attribute_name(vrl_core::AttributeId(st.actions[HEAD_ATTR] as u32)))?
        };
        let pred_action = if st.actions[HEAD_PRED] == graph.n_predicates() {
            "null".to_string()
        } else {
            name(graph.predicate_name(vrl_core::PredicateId(st.actions[HEAD_PRED] as u32)))?
        };
        let cat_action = if st.actions[HEAD_CAT] == graph.n_categories() {
            "terminal".to_string()
        } else {
            name(graph.category_name(vrl_core::CategoryId(st.actions[HEAD_CAT] as u32)))?
        };
        let delta_a = st
            .sets
            .attrs
            .iter()
            .map(|&a| name(graph.attribute_name(a)))
            .collect::<Result<Vec<_>, _>>()?;
        let delta_p = st
            .sets
            .preds
            .iter()
            .map(|&p| name(graph.predicate_name(p)))
            .collect::<Result<Vec<_>, _>>()?;
        let delta_c = st
            .sets
            .cats
            .iter()
            .map(|&(c, inst)| Ok(json!([name(graph.category_name(c))?, inst])))
            .collect::<Result<Vec<_>, String>>()?;
        steps.push(json!({
            "step": st.step,
            "subject": st.subject,
            "subject_category": name(graph.category_name(st.subject_cat))?,
            "object": st.object,
            "actions": { "attribute": attr_action, "predicate": pred_action, "category": cat_action },
            "rewards": st.rewards,
            "emitted_phrases": st.emitted_phrases,
            "delta_a": delta_a,
            "delta_p": delta_p,
            "delta_c": delta_c,
        }));
    }
    let trace = json!({
        "scene": scene.id,
        "variant": cfg.variant,
        "n_steps": steps.len(),
        "n_predictions": episode.log.predictions.len(),
        "steps": steps,
    });
    print_stdout(&serde_json::to_string_pretty(&trace).map_err(|e| e.to_string())?);
    Ok(())
}
