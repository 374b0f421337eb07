//! UNet-style feature extractor: four stride-2 encoder levels and a
//! skip-connected decoder, yielding coarse (1/8) and fine (1/2) maps.

use crate::autograd::{Graph, Tensor, Var};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::imageio::GrayImage;
use crate::layers::{apply_bn_updates, BatchNorm, BnUpdate, Conv2d, Mode};
use crate::params::{Binding, ParamStore};

pub use crate::layers::Mode as BackboneMode;

const LABEL: &str = "backbone.conv";

/// Coarse and fine feature maps of one image, plus extent bookkeeping.
pub struct FeaturePyramid {
    /// `[coarse_dim, H/8, W/8]` of the padded image.
    pub coarse: Var,
    /// `[fine_dim, H/2, W/2]` of the padded image.
    pub fine: Var,
    pub image_w: usize,
    pub image_h: usize,
    pub padded_w: usize,
    pub padded_h: usize,
}

impl FeaturePyramid {
    pub fn coarse_grid(&self) -> (usize, usize) {
        (self.padded_w / 8, self.padded_h / 8)
    }

    pub fn fine_grid(&self) -> (usize, usize) {
        (self.padded_w / 2, self.padded_h / 2)
    }
}

struct ConvBn {
    conv: Conv2d,
    bn: BatchNorm,
}

enum Act {
    Relu,
    Gelu,
}

impl ConvBn {
    fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        seed: u64,
    ) -> Self {
        ConvBn {
            conv: Conv2d::new(store, &format!("{name}.conv"), c_in, c_out, k, stride, seed),
            bn: BatchNorm::new(store, &format!("{name}.bn"), c_out, seed),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn forward(
        &self,
        g: &Graph,
        bind: &Binding,
        store: &ParamStore,
        x: Var,
        mode: Mode,
        updates: &mut Vec<BnUpdate>,
        act: Act,
    ) -> Var {
        let y = self.conv.forward(g, bind, x, LABEL);
        let y = self.bn.forward(g, bind, store, y, mode, updates);
        match act {
            Act::Relu => g.relu(y),
            Act::Gelu => g.gelu(y),
        }
    }
}

pub struct Backbone {
    // Encoder: one downsampling block plus refinement convs per level.
    f1_down: ConvBn,
    f1_a: ConvBn,
    f1_b: ConvBn,
    f2_down: ConvBn,
    f2_a: ConvBn,
    f3_down: ConvBn,
    f3_a: ConvBn,
    f4_down: ConvBn,
    f4_a: ConvBn,
    // Decoder laterals and fusion convs.
    lat3: Conv2d,
    out3_a: ConvBn,
    out3_b: Conv2d,
    lat2: Conv2d,
    out2_a: ConvBn,
    out2_b: Conv2d,
    lat1: Conv2d,
    out1_a: ConvBn,
    out1_b: Conv2d,
}

impl Backbone {
    pub fn new(store: &mut ParamStore, cfg: &RunConfig, seed: u64) -> Self {
        let [c1, c2, c3, c4] = cfg.widths;
        let (dc, df) = (cfg.coarse_dim, cfg.fine_dim);
        Backbone {
            f1_down: ConvBn::new(store, "backbone.f1.down", 1, c1, 7, 2, seed),
            f1_a: ConvBn::new(store, "backbone.f1.a", c1, c1, 3, 1, seed),
            f1_b: ConvBn::new(store, "backbone.f1.b", c1, c1, 3, 1, seed),
            f2_down: ConvBn::new(store, "backbone.f2.down", c1, c2, 3, 2, seed),
            f2_a: ConvBn::new(store, "backbone.f2.a", c2, c2, 3, 1, seed),
            f3_down: ConvBn::new(store, "backbone.f3.down", c2, c3, 3, 2, seed),
            f3_a: ConvBn::new(store, "backbone.f3.a", c3, c3, 3, 1, seed),
            f4_down: ConvBn::new(store, "backbone.f4.down", c3, c4, 3, 2, seed),
            f4_a: ConvBn::new(store, "backbone.f4.a", c4, c4, 3, 1, seed),
            lat3: Conv2d::new(store, "backbone.lat3", c3, c4, 3, 1, seed),
            out3_a: ConvBn::new(store, "backbone.out3.a", c4, dc, 3, 1, seed),
            out3_b: Conv2d::new(store, "backbone.out3.b", dc, dc, 3, 1, seed),
            lat2: Conv2d::new(store, "backbone.lat2", c2, dc, 3, 1, seed),
            out2_a: ConvBn::new(store, "backbone.out2.a", dc, c2, 3, 1, seed),
            out2_b: Conv2d::new(store, "backbone.out2.b", c2, c2, 3, 1, seed),
            lat1: Conv2d::new(store, "backbone.lat1", c1, c2, 3, 1, seed),
            out1_a: ConvBn::new(store, "backbone.out1.a", c2, df, 3, 1, seed),
            out1_b: Conv2d::new(store, "backbone.out1.b", df, df, 3, 1, seed),
        }
    }

    /// Run the conv stack on an image tensor `[1, h, w]` whose extents are
    /// already multiples of 8. Returns `(coarse, fine)` maps.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_map(
        &self,
        g: &Graph,
        bind: &Binding,
        store: &ParamStore,
        image: Var,
        mode: Mode,
        updates: &mut Vec<BnUpdate>,
    ) -> (Var, Var) {
        let f1 = {
            let y = self.f1_down.forward(g, bind, store, image, mode, updates, Act::Relu);
            let y = self.f1_a.forward(g, bind, store, y, mode, updates, Act::Gelu);
            self.f1_b.forward(g, bind, store, y, mode, updates, Act::Gelu)
        };
        let f2 = {
            let y = self.f2_down.forward(g, bind, store, f1, mode, updates, Act::Gelu);
            self.f2_a.forward(g, bind, store, y, mode, updates, Act::Gelu)
        };
        let f3 = {
            let y = self.f3_down.forward(g, bind, store, f2, mode, updates, Act::Gelu);
            self.f3_a.forward(g, bind, store, y, mode, updates, Act::Gelu)
        };
        let f4 = {
            let y = self.f4_down.forward(g, bind, store, f3, mode, updates, Act::Gelu);
            self.f4_a.forward(g, bind, store, y, mode, updates, Act::Gelu)
        };
        // Decoder; skip connections are lateral conv + upsample, fused by add.
        let coarse = {
            let merged = g.add(self.lat3.forward(g, bind, f3, LABEL), g.upsample2x(f4));
            let y = self.out3_a.forward(g, bind, store, merged, mode, updates, Act::Gelu);
            self.out3_b.forward(g, bind, y, LABEL)
        };
        let f2_out = {
            let merged = g.add(self.lat2.forward(g, bind, f2, LABEL), g.upsample2x(coarse));
            let y = self.out2_a.forward(g, bind, store, merged, mode, updates, Act::Gelu);
            self.out2_b.forward(g, bind, y, LABEL)
        };
        let fine = {
            let merged = g.add(self.lat1.forward(g, bind, f1, LABEL), g.upsample2x(f2_out));
            let y = self.out1_a.forward(g, bind, store, merged, mode, updates, Act::Gelu);
            self.out1_b.forward(g, bind, y, LABEL)
        };
        (coarse, fine)
    }

    /// Extract the feature pyramid of a grayscale image. Inputs smaller than
    /// a multiple of 8 are reflect-padded; extents below 32 are rejected.
    #[allow(clippy::too_many_arguments)]
    pub fn extract(
        &self,
        g: &Graph,
        bind: &Binding,
        store: &ParamStore,
        image: &GrayImage,
        mode: Mode,
        updates: &mut Vec<BnUpdate>,
    ) -> Result<FeaturePyramid> {
        if image.width < 32 || image.height < 32 {
            return Err(Error::Contract(format!(
                "image {}x{} below the 32-pixel minimum",
                image.width, image.height
            )));
        }
        let padded = image.pad_to_multiple(8);
        let (pw, ph) = (padded.width, padded.height);
        let img_var = g.constant(Tensor::new(vec![1, ph, pw], padded.data.clone()));
        let (coarse, fine) = self.forward_map(g, bind, store, img_var, mode, updates);
        let cs = g.shape_of(coarse);
        debug_assert_eq!(cs[1] * 8, ph);
        debug_assert_eq!(cs[2] * 8, pw);
        Ok(FeaturePyramid {
            coarse,
            fine,
            image_w: image.width,
            image_h: image.height,
            padded_w: pw,
            padded_h: ph,
        })
    }
}

pub fn apply_backbone_bn_updates(store: &mut ParamStore, updates: &[BnUpdate]) {
    apply_bn_updates(store, updates);
}

/// 2-D sinusoidal positional encoding: `[h*w, d]`, values in [-1, 1].
/// Channel layout is quarter blocks: x-sines, x-cosines, y-sines, y-cosines.
pub fn positional_encoding(h: usize, w: usize, d: usize) -> Tensor {
    assert_eq!(d % 4, 0, "positional encoding width must be a multiple of 4");
    let q = d / 4;
    let mut data = vec![0.0; h * w * d];
    for y in 0..h {
        for x in 0..w {
            let row = (y * w + x) * d;
            for i in 0..q {
                let freq = 1.0 / 10000f64.powf(i as f64 / q as f64);
                data[row + i] = (x as f64 * freq).sin();
                data[row + q + i] = (x as f64 * freq).cos();
                data[row + 2 * q + i] = (y as f64 * freq).sin();
                data[row + 3 * q + i] = (y as f64 * freq).cos();
            }
        }
    }
    Tensor::new(vec![h * w, d], data)
}

/// Flatten a `[d, h, w]` map into row-major `[h*w, d]` tokens.
pub fn tokens_from_map(g: &Graph, map: Var) -> Var {
    let (d, h, w) = {
        let v = g.shape_of(map);
        (v[0], v[1], v[2])
    };
    g.transpose2d(g.reshape(map, vec![d, h * w]))
}
