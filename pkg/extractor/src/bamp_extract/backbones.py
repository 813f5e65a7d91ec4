"""Frozen vision-transformer backbones and their preprocessing."""

import torch
from torchvision import transforms
from torchvision.models import VisionTransformer, vit_b_16

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class BackboneError(Exception):
    pass


def load_backbone(name: str, weights: str = "pretrained", seed: int = 0):
    """Build a frozen backbone whose forward pass returns the pre-classifier
    token representation.

    ``weights`` is ``pretrained`` (torchvision's published checkpoint, fetched
    on first use), ``random`` (seeded initialization, for plumbing tests and
    offline runs), or a path to a ``state_dict`` file.
    """
    if name == "vit_b16":
        if weights == "pretrained":
            from torchvision.models import ViT_B_16_Weights

            model = vit_b_16(weights=ViT_B_16_Weights.IMAGENET1K_V1)
        else:
            with torch.random.fork_rng():
                torch.manual_seed(seed)
                model = vit_b_16(weights=None)
            if weights != "random":
                state = torch.load(weights, map_location="cpu")
                model.load_state_dict(state)
        resolution = 224
    elif name == "vit_tiny_test":
        # Small deterministic stand-in used by the test suite; never pretrained.
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            model = VisionTransformer(
                image_size=64, patch_size=16, num_layers=2, num_heads=2,
                hidden_dim=64, mlp_dim=128,
            )
        resolution = 64
    else:
        raise BackboneError(f"unknown backbone {name!r} (have: vit_b16, vit_tiny_test)")

    feature_width = model.hidden_dim
    model.heads = torch.nn.Identity()
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model, feature_width, resolution


def build_preprocess(resolution: int):
    """Deterministic eval-time preprocessing; returns (transform, description)."""
    resize = int(resolution * 256 / 224)
    transform = transforms.Compose(
        [
            transforms.Resize(resize, interpolation=transforms.InterpolationMode.BILINEAR),
            transforms.CenterCrop(resolution),
            transforms.ToTensor(),
            transforms.Normalize(IMAGENET_MEAN, IMAGENET_STD),
        ]
    )
    description = (
        f"resize_shorter={resize} bilinear, center_crop={resolution}, "
        f"normalize=imagenet"
    )
    return transform, description
