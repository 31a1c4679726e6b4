use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use curvesplat::dataset::{self, Dataset};
use curvesplat::degrade::Profile;
use curvesplat::gradsuite;
use curvesplat::imaging::{load_image, save_image, Image};
use curvesplat::refine::residual_map;
use curvesplat::splat::{demo_scene, load_scene, save_scene, Camera};
use curvesplat::trainer::{
    evaluate, load_checkpoint, render_novel, save_checkpoint, write_loss_csv, Checkpoint, Scenario,
    Trainer,
};
use curvesplat::viewadapt::curve_bias_values;

use crate::config::{FileConfig, ViewSet};
use crate::manifest::ManifestBuilder;
use crate::{
    Cli, Command, DemoSceneArgs, EvalArgs, ExportCurvesArgs, GradcheckArgs, NumericalFailure,
    RenderArgs, SynthArgs, TrainArgs, UsageError,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const RESIDUAL_DIR: &str = "residual";

pub fn run(cli: Cli) -> Result<()> {
    let config_path = cli.config.as_deref();
    let config = FileConfig::load(config_path)?;
    let manifest = |name: &str| ManifestBuilder::new(name, config_path);
    match cli.command {
        Command::DemoScene(a) => demo_scene_cmd(a, config, manifest("demo-scene")),
        Command::Synth(a) => synth(a, config, manifest("synth")),
        Command::Train(a) => train(a, config, manifest("train")),
        Command::Render(a) => render(a, config, manifest("render")),
        Command::Eval(a) => eval(a, manifest("eval")),
        Command::Gradcheck(a) => gradcheck(a, manifest("gradcheck")),
        Command::ExportCurves(a) => export_curves(a, manifest("export-curves")),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn demo_scene_cmd(a: DemoSceneArgs, config: FileConfig, mut m: ManifestBuilder) -> Result<()> {
    let mut opts = config.scene;
    opts.size = a.size.unwrap_or(opts.size);
    opts.wall_grid = a.wall_grid.unwrap_or(opts.wall_grid);
    opts.objects = a.objects.unwrap_or(opts.objects);
    opts.train_views = a.train_views.unwrap_or(opts.train_views);
    opts.held_out_views = a.held_out_views.unwrap_or(opts.held_out_views);
    opts.arc_degrees = a.arc_degrees.unwrap_or(opts.arc_degrees);
    opts.seed = a.seed.unwrap_or(opts.seed);
    if opts.size == 0 || opts.train_views == 0 {
        return Err(UsageError("size and train_views must be positive".into()).into());
    }
    create_dir(&a.out)?;
    let path = a.out.join(dataset::SCENE_FILE);
    save_scene(&demo_scene(&opts), &path)?;
    m.seed(opts.seed);
    m.output(&path);
    m.finish(&a.out)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn synth(a: SynthArgs, config: FileConfig, mut m: ManifestBuilder) -> Result<()> {
    let profile = a.profile.unwrap_or(config.degrade.profile);
    let seed = a.seed.unwrap_or(config.degrade.seed);
    let jitter = config.degrade.jitter();
    let scene = load_scene(&a.scene)?;
    m.input(&a.scene);
    let ds = match &a.clean {
        Some(dir) => {
            let clean = scene
                .cameras
                .iter()
                .map(|c| {
                    let path = dir.join(dataset::file_name(c.view_id));
                    m.input(&path);
                    Ok(load_image(&path)?)
                })
                .collect::<Result<Vec<_>>>()?;
            dataset::synthesize_from_clean(&scene, clean, profile, seed, &jitter)?
        }
        None => dataset::synthesize(&scene, profile, seed, &jitter)?,
    };
    create_dir(&a.out)?;
    ds.save(&a.out)?;
    m.seed(seed);
    for name in [
        dataset::SCENE_FILE,
        dataset::PARAMS_FILE,
        dataset::CLEAN_DIR,
        dataset::DEGRADED_DIR,
    ] {
        m.output(a.out.join(name));
    }
    m.finish(&a.out)?;
    println!(
        "synthesized {} views ({} held out) with profile {profile}",
        ds.scene.cameras.len(),
        ds.scene.held_out_cameras().len()
    );
    Ok(())
}

fn train(a: TrainArgs, config: FileConfig, mut m: ManifestBuilder) -> Result<()> {
    let ds = Dataset::load(&a.data)?;
    m.input(&a.data);
    let views = ds.training_views();
    let mut trainer = match &a.resume {
        Some(path) => {
            m.input(path);
            let ck = load_checkpoint(path)?;
            let t = Trainer::resume(ck, views)?;
            match a.iterations {
                Some(n) => t.with_iterations(n),
                None => t,
            }
        }
        None => {
            let mut c = config.train;
            c.iterations = a.iterations.unwrap_or(c.iterations);
            c.seed = a.seed.unwrap_or(c.seed);
            c.method = a.method.unwrap_or(c.method);
            c.eta = a.eta.or(c.eta);
            c.lambda = a.lambda.unwrap_or(c.lambda);
            c.optimize_geometry |= a.optimize_geometry;
            c.scenario = match a.scenario {
                Some(s) => s,
                None if config.scenario_given => c.scenario,
                None => ds
                    .manifest
                    .profile
                    .parse::<Profile>()
                    .map(Scenario::from_profile)
                    .unwrap_or(c.scenario),
            };
            Trainer::new(&ds.scene, views, c)?
        }
    };
    if a.checkpoint_every == Some(0) {
        return Err(UsageError("--checkpoint-every must be positive".into()).into());
    }
    create_dir(&a.out)?;
    let ck_path = a.out.join(CHECKPOINT_FILE);
    let total = trainer.config().iterations;
    let report_every = (total / 20).max(1);
    while trainer.iteration() < total {
        let parts = trainer.step()?;
        let it = trainer.iteration();
        if it % report_every == 0 || it == total {
            eprintln!("iter {it}/{total} loss {:.6}", parts.total);
        }
        if a.checkpoint_every.is_some_and(|n| it % n == 0) && it < total {
            save_checkpoint(&trainer.checkpoint(), &ck_path)?;
        }
    }
    save_checkpoint(&trainer.checkpoint(), &ck_path)?;
    let loss_path = a.out.join("loss.csv");
    write_loss_csv(&loss_path, trainer.log())?;
    let config_path = a.out.join("config.json");
    write_text(
        &config_path,
        &serde_json::to_string_pretty(trainer.config())?,
    )?;
    m.seed(trainer.config().seed);
    for p in [&ck_path, &loss_path, &config_path] {
        m.output(p);
    }
    m.finish(&a.out)?;
    println!(
        "trained {total} iterations; checkpoint {}",
        ck_path.display()
    );
    Ok(())
}

/// The dataset camera for each training view of a checkpoint, with its
/// degraded observation.
fn checkpoint_views<'a>(ck: &Checkpoint, ds: &'a Dataset) -> Result<Vec<(&'a Camera, &'a Image)>> {
    ck.view_ids
        .iter()
        .map(|&id| {
            ds.scene
                .cameras
                .iter()
                .zip(&ds.degraded)
                .find(|(c, _)| c.view_id == id && !c.held_out)
                .with_context(|| {
                    format!("dataset has no training view {id} used by the checkpoint")
                })
        })
        .collect()
}

fn render(a: RenderArgs, config: FileConfig, mut m: ManifestBuilder) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let ds = Dataset::load(&a.data)?;
    m.input(&a.checkpoint);
    m.input(&a.data);
    let set = a.views.unwrap_or(config.eval.views);
    let cameras: Vec<Camera> = ds
        .scene
        .cameras
        .iter()
        .filter(|c| match set {
            ViewSet::HeldOut => c.held_out,
            ViewSet::Training => !c.held_out,
            ViewSet::All => true,
        })
        .cloned()
        .collect();
    create_dir(&a.out)?;
    for (cam, img) in cameras.iter().zip(render_novel(&ck, &cameras)?) {
        let path = a.out.join(dataset::file_name(cam.view_id));
        save_image(&img, &path)?;
        m.output(path);
    }
    if a.dump_residual {
        let dir = a.out.join(RESIDUAL_DIR);
        create_dir(&dir)?;
        for (cam, img) in checkpoint_views(&ck, &ds)? {
            let r = residual_map(img, &ck.model.residual, &ck.model.store)?;
            let path = dir.join(format!("residual_{:03}.png", cam.view_id));
            save_image(&r.map(|v| (0.5 + v).clamp(0.0, 1.0)), &path)?;
            m.output(path);
        }
    }
    m.finish(&a.out)?;
    println!("rendered {} views into {}", cameras.len(), a.out.display());
    Ok(())
}

fn png_names(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if entry.file_type()?.is_file() && name.to_ascii_lowercase().ends_with(".png") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

fn eval(a: EvalArgs, mut m: ManifestBuilder) -> Result<()> {
    let names = png_names(&a.pred)?;
    if names.is_empty() {
        bail!("no PNG images in {}", a.pred.display());
    }
    let mut pred = Vec::new();
    let mut gt = Vec::new();
    for name in &names {
        let (p, g) = (a.pred.join(name), a.gt.join(name));
        if !g.is_file() {
            bail!(
                "{} has no ground-truth counterpart {}",
                p.display(),
                g.display()
            );
        }
        pred.push(load_image(&p)?);
        gt.push(load_image(&g)?);
    }
    m.input(&a.pred);
    m.input(&a.gt);
    let table = evaluate(&pred, &gt)?;
    create_dir(&a.out)?;
    let csv_path = a.out.join("metrics.csv");
    let mut csv = String::from("file,psnr,ssim\n");
    for (row, name) in table.rows.iter().zip(&names) {
        csv.push_str(&format!("{name},{:.6},{:.6}\n", row.psnr, row.ssim));
    }
    csv.push_str(&format!(
        "mean,{:.6},{:.6}\n",
        table.mean_psnr, table.mean_ssim
    ));
    write_text(&csv_path, &csv)?;
    let json_path = a.out.join("metrics.json");
    write_text(&json_path, &serde_json::to_string_pretty(&table)?)?;
    m.output(&csv_path);
    m.output(&json_path);
    m.finish(&a.out)?;
    println!(
        "mean PSNR {:.2} dB, mean SSIM {:.4} over {} views",
        table.mean_psnr,
        table.mean_ssim,
        names.len()
    );
    Ok(())
}

fn gradcheck(a: GradcheckArgs, mut m: ManifestBuilder) -> Result<()> {
    let reports = gradsuite::gradient_suite()?;
    let csv = gradsuite::reports_csv(&reports);
    create_dir(&a.out)?;
    let path = a.out.join("gradcheck.csv");
    write_text(&path, &csv)?;
    m.output(&path);
    m.finish(&a.out)?;
    print!("{csv}");
    let failed: Vec<&str> = reports
        .iter()
        .filter(|r| !r.pass)
        .map(|r| r.op.as_str())
        .collect();
    if !failed.is_empty() {
        return Err(
            NumericalFailure(format!("gradient check failed for: {}", failed.join(", "))).into(),
        );
    }
    Ok(())
}

fn export_curves(a: ExportCurvesArgs, mut m: ManifestBuilder) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let ds = Dataset::load(&a.data)?;
    m.input(&a.checkpoint);
    m.input(&a.data);
    let global = ck.model.store.values(ck.model.global_lut);
    create_dir(&a.out)?;
    let mut written: Vec<PathBuf> = Vec::new();
    for (cam, img) in checkpoint_views(&ck, &ds)? {
        let bias = curve_bias_values(
            &ck.model.store,
            &ck.model.adapter.curve,
            img,
            &cam.world_to_camera,
        )?;
        let mut csv = String::from("index,global,bias,curve\n");
        for (i, (g, b)) in global.iter().zip(&bias).enumerate() {
            csv.push_str(&format!("{i},{g:.9},{b:.9},{:.9}\n", g + b));
        }
        let path = a.out.join(format!("curves_{:03}.csv", cam.view_id));
        write_text(&path, &csv)?;
        written.push(path);
    }
    for p in &written {
        m.output(p);
    }
    m.finish(&a.out)?;
    println!(
        "wrote {} curve files into {}",
        written.len(),
        a.out.display()
    );
    Ok(())
}
