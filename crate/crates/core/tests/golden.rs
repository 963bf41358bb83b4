//! Golden verbalizations of the first perceived frame of each scenario.
//! Regenerate with `KGDRIVE_BLESS=1 cargo test --test golden`.

use std::path::{Path, PathBuf};

use kgdrive::sim::{load_scenario_dir, Env};
use kgdrive::verbalizer::{connected_blocks, default_radius, scene_query, verbalize};

fn data() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

#[test]
fn first_frame_text_matches_golden_files() {
    let bless = std::env::var_os("KGDRIVE_BLESS").is_some();
    for sc in load_scenario_dir(&data().join("scenarios")).unwrap() {
        let scene = Env::new(&sc, 0.5).unwrap().perceive();
        let blocks = connected_blocks(&scene.grid, &default_radius, Some(scene.ego.position));
        let text = format!("{}\n--- query\n{}\n", verbalize(&scene, &blocks), scene_query(&scene));
        let path = data().join("fixtures/verbalizer").join(format!("{}.txt", sc.scenario_id));
        if bless {
            std::fs::write(&path, &text).unwrap();
        }
        let want = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing {}", path.display()));
        assert_eq!(text, want, "{}", sc.scenario_id);
    }
}
