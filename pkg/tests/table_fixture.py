"""Three regression results carrying the reference coefficient table's values."""

from srlena.stats import RegressionResult


def _result(model_id, rows, resid, r2, f, fp, n):
    names = [r[0] for r in rows]
    return RegressionResult(
        names=names,
        coefficients={r[0]: r[1] for r in rows},
        standard_errors={r[0]: r[2] for r in rows},
        t_values={r[0]: r[1] / r[2] if r[2] else 0.0 for r in rows},
        p_values={r[0]: r[3] for r in rows},
        r_squared=r2,
        f_value=f,
        f_p_value=fp,
        n_obs=n,
        df_resid=n - len(rows),
        residual_se=resid,
        model_id=model_id,
    )


# (name, beta, se, p); p values chosen inside the reference star bands
RESULTS = {
    "M1": _result(
        "M1",
        [
            ("intercept", -0.49, 0.19, 0.012),
            ("performance_low", 0.33, 0.10, 0.0008),
            ("school_1", 0.18, 0.10, 0.07),
            ("pretest_score", 0.04, 0.03, 0.19),
            ("task_length", 0.001, 0.002, 0.6),
        ],
        0.38, 0.19, 3.59, 0.006, 66,
    ),
    "M2": _result(
        "M2",
        [
            ("intercept", -0.95, 0.88, 0.28),
            ("performance_low", 0.24, 0.10, 0.02),
            ("cet4_score", 0.001, 0.002, 0.6),
            ("pretest_score", 0.01, 0.03, 0.74),
            ("task_length", -0.001, 0.01, 0.9),
        ],
        0.37, 0.20, 3.44, 0.008, 59,
    ),
    "M3": _result(
        "M3",
        [
            ("intercept", -0.41, 0.04, 1e-15),
            ("performance_low", 0.04, 0.02, 0.047),
            ("level_SE", 0.65, 0.02, 1e-40),
            ("pretest_score", 0.01, 0.004, 0.2),
        ],
        0.10, 0.91, 408.1, 1e-60, 125,
    ),
}

HEADERS = {"M1": "M1 (SE)", "M2": "M2 (HE)", "M3": "M3 (SE vs HE)"}
