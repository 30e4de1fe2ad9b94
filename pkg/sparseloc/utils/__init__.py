from .runs import run_bounds, select_runs

__all__ = ["run_bounds", "select_runs"]
