use crate::error::{Error, Result};
use crate::nn::{Network, Pass};
use crate::tensor::{ops, Tape, Tensor};

/// Class-activation map from a `[C, H, W]` feature and the gradient of the
/// target logit with respect to it: `ReLU(Σ_c w_c · f_c)` with `w_c` the
/// spatial mean of channel `c`'s gradient, divided by its maximum. An
/// all-zero map stays all-zero.
pub fn cam_from_gradients(feature: &Tensor, grad: &[f32]) -> Result<Tensor> {
    let &[c, h, w] = feature.shape() else {
        return Err(Error::dim("grad_cam", format!("expected [C, H, W], got {:?}", feature.shape())));
    };
    if grad.len() != feature.len() {
        return Err(Error::dim("grad_cam", format!("{} gradients for {} features", grad.len(), feature.len())));
    }
    let hw = h * w;
    let mut cam = vec![0.0f64; hw];
    for ch in 0..c {
        let g = &grad[ch * hw..(ch + 1) * hw];
        let weight = g.iter().map(|&v| f64::from(v)).sum::<f64>() / hw as f64;
        for (m, &f) in cam.iter_mut().zip(&feature.data()[ch * hw..(ch + 1) * hw]) {
            *m += weight * f64::from(f);
        }
    }
    let top = cam.iter().fold(0.0f64, |a, &v| a.max(v));
    let out = cam
        .iter()
        .map(|&v| if top > 0.0 { (v.max(0.0) / top) as f32 } else { 0.0 })
        .collect();
    Tensor::new(vec![h, w], out)
}

/// Grad-CAM heatmap of `target_class` for one image (`[C, H, W]` or
/// `[1, C, H, W]`), at the resolution of the last-stage feature map.
/// Eval mode; running statistics are not touched.
pub fn grad_cam(net: &mut Network, image: &Tensor, target_class: usize) -> Result<Tensor> {
    if target_class >= net.num_classes() {
        return Err(Error::Usage(format!(
            "target class {target_class} out of range for {} classes",
            net.num_classes()
        )));
    }
    let x = match *image.shape() {
        [c, h, w] => image.reshape(vec![1, c, h, w])?,
        [1, _, _, _] => image.clone(),
        ref s => return Err(Error::dim("grad_cam", format!("expected one image, got {s:?}"))),
    };
    let pass = Pass::eval();
    let feature = net.extract(&x, &pass)?;
    let tape = Tape::new();
    let watched = tape.watch(&feature);
    let logits = net.classify(&watched, &pass)?;
    let score = ops::sum(&ops::pick(&logits, &[target_class])?)?;
    let grads = tape.gradients(&score)?;
    let [_, c, h, w] = *feature.shape() else {
        return Err(Error::dim("grad_cam", "feature map is not 4-D"));
    };
    let zeros = vec![0.0; feature.len()];
    let g = grads.get(&watched).unwrap_or(&zeros);
    cam_from_gradients(&feature.reshape(vec![c, h, w])?, g)
}
