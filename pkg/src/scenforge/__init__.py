"""scenforge: crash-scenario documents -> probabilistic driving scenarios.

The pipeline stages, in order:

1. ``dsl``        parse/validate/serialize the scenario document language
2. ``normalize``  canonical tokens, fallback defaults, actor model resolution
3. ``synth``      compile to a scenario template and Scenic program text
4. ``sampling``   draw concrete instances from the template's free parameters
5. ``sim``        realize road geometry and simulate instances into traces
6. ``rules``      evaluate traces against the CVC rule registry
7. ``extract``    turn crash reports into documents via a chat endpoint
8. ``evaluate``   accuracy scoring, rater agreement, violation-count tables
"""

__version__ = "0.1.0"
