//! On-disk dataset: a manifest, main-path scenes with their maps, and paired samples.
//!
//! ```text
//! DIR/manifest.txt
//! DIR/mp/00000.scene   DIR/mp/00000.map
//! DIR/pairs/00000.pair
//! ```

use std::path::{Path, PathBuf};

use radiomap_core::envgrid::{Scene, SceneParams};
use radiomap_core::formats::{
    decode_map, decode_pair, decode_scene, encode_map, encode_pair, encode_scene, read_file, write_file, PairedSample,
};
use radiomap_core::RadioMap;

use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.txt";
const MANIFEST_VERSION: &str = "1";

pub struct Dataset {
    pub reflections: usize,
    pub mp: Vec<(Scene, RadioMap)>,
    pub pairs: Vec<PairedSample>,
}

fn seed_list(seeds: impl Iterator<Item = u64>) -> String {
    seeds.map(|s| s.to_string()).collect::<Vec<_>>().join(",")
}

fn mp_path(dir: &Path, i: usize, ext: &str) -> PathBuf {
    dir.join("mp").join(format!("{i:05}.{ext}"))
}

fn pair_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("pairs").join(format!("{i:05}.pair"))
}

pub struct GenCounts {
    pub mu_scenes: usize,
    pub tx_per_scene: usize,
}

impl Dataset {
    pub fn write(&self, dir: &Path, seed: u64, counts: &GenCounts, params: &SceneParams) -> CliResult<()> {
        for (i, (scene, map)) in self.mp.iter().enumerate() {
            write_file(&mp_path(dir, i, "scene"), &encode_scene(scene))?;
            write_file(&mp_path(dir, i, "map"), &encode_map(map))?;
        }
        for (i, p) in self.pairs.iter().enumerate() {
            write_file(&pair_path(dir, i), &encode_pair(p))?;
        }
        let lines = [
            ("format", MANIFEST_VERSION.to_string()),
            ("seed", seed.to_string()),
            ("reflections", self.reflections.to_string()),
            ("width", params.width.to_string()),
            ("height", params.height.to_string()),
            ("mp_count", self.mp.len().to_string()),
            ("mu_scenes", counts.mu_scenes.to_string()),
            ("tx_per_scene", counts.tx_per_scene.to_string()),
            ("pair_count", self.pairs.len().to_string()),
            ("mp_seeds", seed_list(self.mp.iter().map(|(s, _)| s.seed))),
            ("pair_seeds", seed_list(self.pairs.iter().map(|p| p.scene.seed))),
        ];
        let text: String = lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        write_file(&dir.join(MANIFEST), text.as_bytes())?;
        Ok(())
    }

    /// Loads a dataset written by [`Dataset::write`]. Scene seeds come from the manifest.
    pub fn load(dir: &Path) -> CliResult<Dataset> {
        let manifest = dir.join(MANIFEST);
        if !manifest.is_file() {
            return Err(CliError::Config(format!("no dataset manifest at {}", manifest.display())));
        }
        let text = String::from_utf8(read_file(&manifest)?)
            .map_err(|_| radiomap_core::Error::Format("manifest is not UTF-8".into()))?;
        let field = |key: &str| -> CliResult<&str> {
            text.lines()
                .filter_map(|l| l.split_once('='))
                .find(|(k, _)| k.trim() == key)
                .map(|(_, v)| v.trim())
                .ok_or_else(|| bad_manifest(format!("missing {key}")))
        };
        if field("format")? != MANIFEST_VERSION {
            return Err(bad_manifest("unsupported format version".into()));
        }
        let number = |key: &str| -> CliResult<usize> { field(key)?.parse().map_err(|_| bad_manifest(format!("bad {key}"))) };
        let seeds = |key: &str, n: usize| -> CliResult<Vec<u64>> {
            let list: Vec<u64> = field(key)?
                .split(',')
                .filter(|s| !s.is_empty())
                .map(|s| s.trim().parse().map_err(|_| bad_manifest(format!("bad seed in {key}"))))
                .collect::<CliResult<_>>()?;
            if list.len() != n {
                return Err(bad_manifest(format!("{key} lists {} seeds for {n} entries", list.len())));
            }
            Ok(list)
        };
        let reflections = number("reflections")?;
        let mp_count = number("mp_count")?;
        let pair_count = number("pair_count")?;
        let mp_seeds = seeds("mp_seeds", mp_count)?;
        let pair_seeds = seeds("pair_seeds", pair_count)?;
        let mut mp = Vec::with_capacity(mp_count);
        for (i, &seed) in mp_seeds.iter().enumerate() {
            let mut scene = decode_scene(&read_file(&mp_path(dir, i, "scene"))?)?;
            scene.seed = seed;
            let map = decode_map(&read_file(&mp_path(dir, i, "map"))?)?;
            mp.push((scene, map));
        }
        let mut pairs = Vec::with_capacity(pair_count);
        for (i, &seed) in pair_seeds.iter().enumerate() {
            let mut p = decode_pair(&read_file(&pair_path(dir, i))?)?;
            p.scene.seed = seed;
            pairs.push(p);
        }
        Ok(Dataset { reflections, mp, pairs })
    }
}

fn bad_manifest(msg: String) -> CliError {
    CliError::Core(radiomap_core::Error::Format(format!("manifest: {msg}")))
}
