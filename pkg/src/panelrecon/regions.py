"""Static department metadata: DANE codes, names and structural clusters."""

from __future__ import annotations

DEPARTMENT_NAMES: dict[str, str] = {
    "05": "Antioquia",
    "08": "Atlántico",
    "11": "Bogotá D.C.",
    "13": "Bolívar",
    "15": "Boyacá",
    "17": "Caldas",
    "18": "Caquetá",
    "19": "Cauca",
    "20": "Cesar",
    "23": "Córdoba",
    "25": "Cundinamarca",
    "27": "Chocó",
    "41": "Huila",
    "44": "La Guajira",
    "47": "Magdalena",
    "50": "Meta",
    "52": "Nariño",
    "54": "Norte de Santander",
    "63": "Quindío",
    "66": "Risaralda",
    "68": "Santander",
    "70": "Sucre",
    "73": "Tolima",
    "76": "Valle del Cauca",
    "81": "Arauca",
    "85": "Casanare",
    "86": "Putumayo",
    "88": "San Andrés, Providencia y Santa Catalina",
    "91": "Amazonas",
    "94": "Guainía",
    "95": "Guaviare",
    "97": "Vaupés",
    "99": "Vichada",
}

DEPARTMENT_CODES: frozenset[str] = frozenset(DEPARTMENT_NAMES)

# Structural clusters used for cluster-mean features. 86 and 88 have no
# default assignment and must be supplied through configuration.
STRUCTURAL_CLUSTERS: dict[str, str] = {
    "05": "large_urban",
    "08": "large_urban",
    "11": "large_urban",
    "25": "large_urban",
    "76": "large_urban",
    "68": "consolidated",
    "73": "consolidated",
    "50": "consolidated",
    "70": "consolidated",
    "44": "peripheral",
    "27": "peripheral",
    "81": "peripheral",
    "91": "peripheral",
    "94": "peripheral",
    "95": "peripheral",
    "97": "peripheral",
    "99": "peripheral",
    "52": "atypical_strong",
    "85": "atypical_strong",
    "13": "mid_urban",
    "20": "mid_urban",
    "23": "mid_urban",
    "41": "mid_urban",
    "47": "mid_urban",
    "15": "mid_urban",
    "18": "mid_urban",
    "19": "mid_urban",
    "54": "mid_urban",
    "63": "mid_urban",
    "66": "mid_urban",
    "17": "mid_urban",
}

EQI_LABELS: tuple[str, ...] = ("Muy bajo", "Bajo", "Medio", "Alto", "Muy alto")
