from fastapi import APIRouter

from models.config import RunConfig
from models.requests import ReportRequest, RunRequest
from services.attention_diagnose import hess_flow

router = APIRouter()


@router.post("/train")
def train_model(request: RunRequest):
    """Train the configured model and write its checkpoint.

    Args:
        request (RunRequest): Run configuration.

    Returns:
        Dict: The training trace, or {"error": message}."""
    try:
        return hess_flow.train(request.config).model_dump(mode="json")
    except Exception as e:
        return {"error": f"{e}"}


@router.post("/curvature")
def curvature(request: RunRequest):
    """Classify the curvature of every attention group of a trained model.

    Args:
        request (RunRequest): Run configuration and optional checkpoint path.

    Returns:
        Dict: The curvature table, or {"error": message}."""
    try:
        return hess_flow.curvature(request.config, request.checkpoint).model_dump(mode="json")
    except Exception as e:
        return {"error": f"{e}"}


@router.post("/perturb")
def perturb(request: RunRequest):
    """Run the perturbation sweeps of the configuration.

    Args:
        request (RunRequest): Run configuration and optional checkpoint path.

    Returns:
        List[Dict]: One record per trial, or {"error": message}."""
    try:
        return [t.model_dump(mode="json") for t in hess_flow.perturb(request.config, request.checkpoint)]
    except Exception as e:
        return {"error": f"{e}"}


@router.post("/interact")
def interact(request: RunRequest):
    """Hessian interaction matrix of the selected parameters and its strongest coupling.

    Args:
        request (RunRequest): Run configuration and optional checkpoint path.

    Returns:
        Dict: The interaction report, or {"error": message}."""
    try:
        return hess_flow.interact(request.config, request.checkpoint).model_dump(mode="json")
    except Exception as e:
        return {"error": f"{e}"}


@router.post("/intervene")
def intervene(request: RunRequest):
    """Retrain with a scaled learning rate on the target group and compare the tracked coupling.

    Args:
        request (RunRequest): Run configuration and optional checkpoint path.

    Returns:
        Dict: The intervention report, or {"error": message}."""
    try:
        return hess_flow.intervene(request.config, request.checkpoint).model_dump(mode="json")
    except Exception as e:
        return {"error": f"{e}"}


@router.post("/report")
def report(request: ReportRequest):
    """Assemble the report files of a run into one markdown summary.

    Args:
        request (ReportRequest): Output directory of the run.

    Returns:
        Dict: {"summary": markdown}, or {"error": message}."""
    try:
        return {"summary": hess_flow.report(request.output_dir)}
    except Exception as e:
        return {"error": f"{e}"}


@router.get("/defaults")
def defaults():
    """Return the complete default run configuration."""
    return RunConfig().model_dump(mode="json")
