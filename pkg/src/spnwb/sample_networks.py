"""Small hand-checkable networks used by tests, scripts and docs.

All builders return raw spec dicts (the on-disk JSON format) so they can be
written to files for the CLI as well as validated in-process.
"""

from __future__ import annotations

from .network import NetworkSpec, validate_network


def _dist(law: str, **params) -> dict:
    return {"type": law, "params": params} if params else {"type": law}


def single_queue(lam: float = 0.9, mu: float = 1.0, law: str = "exponential",
                 **law_params) -> dict:
    """One buffer fed by one input processor and drained by one server."""
    return {
        "buffers": 1,
        "processors": [
            {"id": "k1", "kind": "input"},
            {"id": "k2", "kind": "service"},
        ],
        "activities": [
            {
                "id": "j1", "kind": "input", "processors": ["k1"], "rate": lam,
                "service_dist": _dist(law, **law_params),
                "constituency": "external",
                "routing": {"external": [{"to": 1, "p": 1.0}]},
            },
            {
                "id": "j2", "kind": "service", "processors": ["k2"], "rate": mu,
                "service_dist": _dist(law, **law_params),
                "constituency": [1],
                "routing": {"1": [{"to": "exit", "p": 1.0}]},
            },
        ],
    }


def tandem(lam: float = 0.5, mu2: float = 2.0, mu3: float = 1.0,
           law: str = "exponential", **law_params) -> dict:
    """Two buffers in series, each with a dedicated server."""
    return {
        "buffers": 2,
        "processors": [
            {"id": "k1", "kind": "input"},
            {"id": "k2", "kind": "service"},
            {"id": "k3", "kind": "service"},
        ],
        "activities": [
            {
                "id": "j1", "kind": "input", "processors": ["k1"], "rate": lam,
                "service_dist": _dist(law, **law_params),
                "constituency": "external",
                "routing": {"external": [{"to": 1, "p": 1.0}]},
            },
            {
                "id": "j2", "kind": "service", "processors": ["k2"], "rate": mu2,
                "service_dist": _dist(law, **law_params),
                "constituency": [1],
                "routing": {"1": [{"to": 2, "p": 1.0}]},
            },
            {
                "id": "j3", "kind": "service", "processors": ["k3"], "rate": mu3,
                "service_dist": _dist(law, **law_params),
                "constituency": [2],
                "routing": {"2": [{"to": "exit", "p": 1.0}]},
            },
        ],
    }


def parallel_single_queues(copies: int = 2, lam: float = 0.9, mu: float = 1.0,
                           law: str = "exponential") -> dict:
    """Disjoint copies of the single queue; the dual optimum is a face, not a
    point, so the pooling certificate must come back false."""
    processors, activities = [], []
    for n in range(copies):
        b = n + 1
        processors += [
            {"id": f"in{n}", "kind": "input"},
            {"id": f"sv{n}", "kind": "service"},
        ]
        activities += [
            {
                "id": f"arr{n}", "kind": "input", "processors": [f"in{n}"],
                "rate": lam, "service_dist": _dist(law),
                "constituency": "external",
                "routing": {"external": [{"to": b, "p": 1.0}]},
            },
            {
                "id": f"srv{n}", "kind": "service", "processors": [f"sv{n}"],
                "rate": mu, "service_dist": _dist(law),
                "constituency": [b],
                "routing": {str(b): [{"to": "exit", "p": 1.0}]},
            },
        ]
    return {"buffers": copies, "processors": processors, "activities": activities}


def n1(law: str = "exponential", **law_params) -> NetworkSpec:
    return validate_network(single_queue(0.9, 1.0, law, **law_params))


def n2(law: str = "exponential", **law_params) -> NetworkSpec:
    return validate_network(tandem(0.5, 2.0, 1.0, law, **law_params))


def n1_critical(law: str = "exponential", **law_params) -> NetworkSpec:
    """Heavy-traffic limit of the single queue (traffic intensity 1)."""
    return validate_network(single_queue(1.0, 1.0, law, **law_params))


def n2_critical(law: str = "exponential", **law_params) -> NetworkSpec:
    """Heavy-traffic limit of the tandem (traffic intensity 1)."""
    return validate_network(tandem(1.0, 2.0, 1.0, law, **law_params))
