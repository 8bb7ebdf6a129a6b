#!/usr/bin/env python3

import sys

from posebeam.application import PosebeamApplication

if __name__ == "__main__":
    app = PosebeamApplication()
    exit_status = app.run(sys.argv)
    sys.exit(exit_status)
