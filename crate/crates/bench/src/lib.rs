//! Shared fixtures for the benchmarks.

use tightsfm_core::eval::Trajectory;
use tightsfm_core::loss::{Sample, SourceView};
use tightsfm_core::synth::{default_sequence, make_sequence, RenderedFrame, SceneSpec};

/// Three consecutive frames of the default loop, rendered once.
pub struct Fixture {
    pub spec: SceneSpec,
    pub traj: Trajectory,
    pub frames: Vec<RenderedFrame>,
}

impl Fixture {
    pub fn new() -> Self {
        let (spec, traj) = default_sequence();
        let traj = Trajectory::new(traj.poses()[..3].to_vec());
        let frames = make_sequence(&spec, &traj, &spec.intrinsics, 1).expect("default scene renders");
        Fixture { spec, traj, frames }
    }

    /// Frame 1 as the target with both neighbours at their true poses.
    pub fn sample(&self) -> Sample<'_> {
        let f = &self.frames;
        Sample {
            target: &f[1].image,
            target_depth: &f[1].depth,
            sources: vec![
                SourceView {
                    image: &f[0].image,
                    depth: Some(&f[0].depth),
                    pose: self.traj.relative(0),
                },
                SourceView {
                    image: &f[2].image,
                    depth: Some(&f[2].depth),
                    pose: self.traj.relative(1).inverse(),
                },
            ],
            intrinsics: &self.spec.intrinsics,
            prior: None,
        }
    }
}

impl Default for Fixture {
    fn default() -> Self {
        Fixture::new()
    }
}
