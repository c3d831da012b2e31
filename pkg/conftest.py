import os
import sys

import hypothesis
import numpy as np

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

np.seterr(all="warn")

hypothesis.settings.register_profile("ci", max_examples=1000, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=50, deadline=None)
hypothesis.settings.register_profile("debugger", report_multiple_bugs=False, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))
